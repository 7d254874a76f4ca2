#!/usr/bin/env python3
"""End-to-end demo on a synthetic math workload with the mock backend.

Generates a small question set and a scripted backend in a work
directory, then drives collect -> label -> build-dataset for a few
strategies and prints what came out. No network, no GPU.

Usage: python scripts/demo_pipeline.py [--workdir demo_run] [--n-questions 12]
"""
from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from negatune.cli import cli_dispatch
from negatune.core import GoldAnswer, Question, Task, read_trajectories, write_questions


def synthesize_workload(workdir: Path, n_questions: int, solve_rate: float, seed: int):
    rng = random.Random(seed)
    questions = []
    episodes = []
    for i in range(n_questions):
        a, b = rng.randint(2, 30), rng.randint(2, 30)
        gold = a * b
        question = Question(
            id=f"demo-{i:03d}",
            text=f"A crate holds {a} boxes with {b} apples each. How many apples in total?",
            gold=GoldAnswer("numeric", str(gold)),
            task=Task.MATH,
        )
        questions.append(question)
        solved = rng.random() < solve_rate
        answer = gold if solved else gold + rng.randint(1, 9)
        episodes.append({
            "match": question.text,
            "turns": [
                f"Thought: multiply the crate count by apples per box\nAction: calculator[{a}*{b}]",
                f"Action: finish[{answer}]",
            ],
        })

    questions_path = workdir / "questions.jsonl"
    with open(questions_path, "wb") as handle:
        write_questions(questions, handle)
    script_path = workdir / "mock_script.json"
    script_path.write_text(json.dumps({"episodes": episodes}, indent=2), encoding="utf-8")
    return questions_path, script_path


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--n-questions", type=int, default=12)
    parser.add_argument("--solve-rate", type=float, default=0.6)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    questions_path, script_path = synthesize_workload(
        workdir, args.n_questions, args.solve_rate, args.seed)

    raw = workdir / "trajectories.jsonl"
    labeled = workdir / "labeled.jsonl"
    assert cli_dispatch(["collect", "--questions", str(questions_path),
                         "--backend", "mock", "--script", str(script_path),
                         "--out", str(raw)]) == 0
    assert cli_dispatch(["label", "--trajectories", str(raw),
                         "--questions", str(questions_path), "--out", str(labeled)]) == 0

    with open(labeled, "rb") as handle:
        pool = read_trajectories(handle)
    positives = sum(1 for lt in pool if lt.label.value == "positive")
    print(f"\ncollected {len(pool)} trajectories: {positives} positive, "
          f"{len(pool) - positives} negative")

    n_pos = min(4, positives)
    n_neg = min(6, len(pool) - positives)
    for strategy in ("vanilla", "nut", "nat"):
        out = workdir / f"dataset_{strategy}.jsonl"
        argv = ["build-dataset", "--pool", str(labeled), "--strategy", strategy,
                "--n-pos", str(n_pos), "--seed", str(args.seed), "--out", str(out),
                "--n-neg", "0" if strategy == "vanilla" else str(n_neg)]
        assert cli_dispatch(argv) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        print(f"{strategy:>8}: {len(lines)} training records -> {out}")

    print(f"\nartifacts in {workdir}/ (see *.manifest.json for provenance)")


if __name__ == "__main__":
    main()
