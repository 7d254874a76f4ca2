#!/usr/bin/env python3
"""Dataset-quantity sweep: fixed positives, varying negatives.

Builds a synthetic labeled pool, emits one training dataset per grid
point plus a composition CSV and a gnuplot pair, mirroring the
fixed-positive/varying-negative experiment layout.

Usage: python scripts/quantity_sweep.py [--out-dir sweep_run] [--n-pos 200]
"""
from __future__ import annotations

import argparse
import random
from pathlib import Path

from negatune.core import Label, LabeledTrajectory, Message, Outcome, Role, Task, Trajectory
from negatune.harness import SweepSpec, render_plot_script, run_sweep
from negatune.reformat import strategy_by_name


def synthetic_pool(n_pos: int, n_neg: int, seed: int):
    rng = random.Random(seed)

    def one(i: int, positive: bool) -> LabeledTrajectory:
        a, b = rng.randint(2, 50), rng.randint(2, 50)
        gold = a + b
        answer = gold if positive else gold + rng.randint(1, 5)
        messages = (
            Message(Role.SYSTEM, "solve math word problems with the calculator tool"),
            Message(Role.USER, f"What is {a} plus {b}? (pool item {i})"),
            Message(Role.ASSISTANT, f"Thought: add them\nAction: calculator[{a}+{b}]"),
            Message(Role.TOOL, f"Observation: {gold}"),
            Message(Role.ASSISTANT, f"Action: finish[{answer}]"),
        )
        trajectory = Trajectory(
            question_id=f"{'p' if positive else 'n'}{i}", task=Task.MATH,
            messages=messages, outcome=Outcome.finished(str(answer)),
            model_id="synthetic", temperature=0.2, sample_index=0,
        )
        return LabeledTrajectory(trajectory, Label.POSITIVE if positive else Label.NEGATIVE,
                                 1.0 if positive else 0.0, str(answer))

    positives = [one(i, True) for i in range(n_pos)]
    negatives = [one(i, False) for i in range(n_neg)]
    return positives, negatives


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="sweep_run")
    parser.add_argument("--strategy", default="nat")
    parser.add_argument("--n-pos", type=int, default=200)
    parser.add_argument("--max-neg", type=int, default=1200)
    parser.add_argument("--step", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    strategy = strategy_by_name(args.strategy)
    positives, negatives = synthetic_pool(args.n_pos, args.max_neg, args.seed)
    grid = tuple(range(0, args.max_neg + 1, args.step))
    spec = SweepSpec("n_pos", args.n_pos, grid, strategy, seed=args.seed,
                     datasets=("gsm8k", "asdiv", "svamp", "multiarith"))

    out_dir = Path(args.out_dir)
    csv_text = run_sweep(spec, positives, negatives, out_dir)
    print(csv_text)

    data_text, script_text = render_plot_script(csv_text, title=strategy.name)
    (out_dir / f"{strategy.name}.dat").write_text(data_text, encoding="utf-8")
    (out_dir / f"{strategy.name}.gp").write_text(script_text, encoding="utf-8")
    print(f"datasets, sweep.csv, and gnuplot pair written to {out_dir}/")
    print("metric columns stay n/a until per-point evaluation endpoints exist")


if __name__ == "__main__":
    main()
