"""Command-line surface.

Subcommands: collect, label, build-dataset, evaluate, sweep, perplexity,
strategies. Exit codes: 0 success, 1 validation error, 2 I/O or
transport error. Every file-writing subcommand drops a run manifest
next to its output (config echo, input hashes, tool versions).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

from . import __version__
from .agent import EpisodeConfig, collect
from .backends import BackendError, CapabilityError, ChatBackend, HttpChatBackend, MockBackend
from .cache import ResponseCache
from .config import ConfigError, RunConfig, load_config
from .core import (Label, SchemaError, Task, read_questions, read_trajectories,
                   read_raw_trajectories, write_raw_trajectories, write_trajectories)
from .harness import SweepSpec, evaluate, perplexity, render_plot_script, render_report, run_sweep
from .labeling import label_trajectory
from .reformat import (PoolShortfall, build_mixture, dedup_positives, emit_dataset,
                       filter_negatives, builtin_strategies, strategy_by_name)
from .search import FixtureSearchClient, LexicalReranker, RemoteEmbeddingReranker, SearchError, SerperSearchClient
from .tools import ToolSet, math_toolset, qa_toolset

log = logging.getLogger("negatune")


def _load_config(args) -> RunConfig:
    config = load_config(args.config)
    log.info("config: %s", json.dumps(config.echo(), sort_keys=True))
    return config


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(output: Path, config: RunConfig, inputs: list[Path]) -> None:
    manifest = {
        "config": config.echo(),
        "inputs": {str(p): _sha256_file(p) for p in inputs if p.exists()},
        "versions": {"negatune": __version__, "python": platform.python_version()},
    }
    manifest_path = Path(str(output) + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _build_backend(args, config: RunConfig) -> ChatBackend:
    if args.backend == "mock":
        if not args.script:
            raise ConfigError("--script is required with --backend mock")
        return MockBackend(args.script, max_tokens=config.backend.max_tokens)
    return HttpChatBackend(
        endpoint_url=config.backend.endpoint_url,
        model_id=config.backend.model_id,
        api_key=config.api_key(),
        max_tokens=config.backend.max_tokens,
        retries=config.backend.retries,
    )


def _build_toolset(task: Task, args, config: RunConfig) -> ToolSet:
    if task is Task.MATH:
        return math_toolset()
    if getattr(args, "live_search", False):
        client = SerperSearchClient(config.tools.search_endpoint,
                                    api_key=os.environ.get("SERPER_API_KEY", ""))
    else:
        client = FixtureSearchClient(getattr(args, "search_fixtures", None) or "search_fixtures")
    if config.tools.reranker == "remote" and config.tools.embedding_endpoint:
        reranker = RemoteEmbeddingReranker(config.tools.embedding_endpoint)
    else:
        reranker = LexicalReranker()
    return qa_toolset(client, reranker, top_k=config.tools.top_k)


def _single_task(tasks: set[Task], what: str) -> Task:
    if len(tasks) != 1:
        raise ValueError(f"{what} mixes tasks {sorted(t.value for t in tasks)}; one task per file")
    return next(iter(tasks))


# ---------------------------------------------------------------------------
# Subcommand handlers.
# ---------------------------------------------------------------------------

def _cmd_collect(args) -> int:
    config = _load_config(args)
    with open(args.questions, "rb") as handle:
        questions = read_questions(handle)
    if not questions:
        raise ValueError("question file is empty")
    task = _single_task({q.task for q in questions}, "question file")

    backend = _build_backend(args, config)
    tools = None if args.mode == "cot" else _build_toolset(task, args, config)
    temps = [float(t) for t in args.temps.split(",")] if args.temps else config.episode.temperatures
    episode = EpisodeConfig(max_turns=args.max_turns or config.episode.max_turns, mode=args.mode)
    cache = None if args.no_cache else ResponseCache(Path(config.paths.cache_dir))

    trajectories = collect(questions, backend, tools, temps=temps, config=episode,
                           cache=cache, max_workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as handle:
        write_raw_trajectories(trajectories, handle)
    _write_manifest(out, config, [Path(args.questions)] + ([Path(args.script)] if args.script else []))
    log.info("wrote %d trajectories to %s", len(trajectories), out)
    return 0


def _cmd_label(args) -> int:
    config = _load_config(args)
    with open(args.questions, "rb") as handle:
        questions = {q.id: q for q in read_questions(handle)}
    with open(args.trajectories, "rb") as handle:
        trajectories = read_raw_trajectories(handle)
    labeled = []
    for trajectory in trajectories:
        question = questions.get(trajectory.question_id)
        if question is None:
            raise ValueError(f"no question with id {trajectory.question_id!r} in {args.questions}")
        labeled.append(label_trajectory(trajectory, question, mode=args.mode))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as handle:
        write_trajectories(labeled, handle)
    _write_manifest(out, config, [Path(args.trajectories), Path(args.questions)])
    positives = sum(1 for lt in labeled if lt.label is Label.POSITIVE)
    log.info("labeled %d trajectories (%d positive) to %s", len(labeled), positives, out)
    return 0


def _cmd_build_dataset(args) -> int:
    config = _load_config(args)
    strategy = strategy_by_name(args.strategy)
    if args.n_neg > 0 and not strategy.include_negatives:
        raise ValueError(f"strategy {strategy.name!r} uses positive examples only; --n-neg must be 0")
    with open(args.pool, "rb") as handle:
        pool = read_trajectories(handle)
    if not pool:
        raise ValueError("labeled pool is empty")
    task = _single_task({lt.trajectory.task for lt in pool}, "pool")

    usable = filter_negatives(pool, task)
    usable = dedup_positives(usable)
    positives = [lt for lt in usable if lt.label is Label.POSITIVE]
    negatives = [lt for lt in usable if lt.label is Label.NEGATIVE]
    records = build_mixture(positives, negatives, args.n_pos, args.n_neg, strategy,
                            seed=args.seed if args.seed is not None else config.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as handle:
        emit_dataset(records, handle)
    _write_manifest(out, config, [Path(args.pool)])
    log.info("emitted %d records to %s", len(records), out)
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    strategy = strategy_by_name(args.strategy)
    with open(args.questions, "rb") as handle:
        questions = read_questions(handle)
    if not questions:
        raise ValueError("question file is empty")
    task = _single_task({q.task for q in questions}, "question file")

    backend = _build_backend(args, config)
    tools = None if args.mode == "cot" else _build_toolset(task, args, config)
    if args.temperature is not None:
        temperature = args.temperature
    else:
        temperature = 0.7 if task is Task.MULTIHOP_QA else 0.0
    episode = EpisodeConfig(max_turns=args.max_turns or config.episode.max_turns,
                            mode=args.mode, temperature=temperature)
    n_runs = args.n_runs if args.n_runs else (5 if task is Task.MULTIHOP_QA else 1)

    audit_dir = args.audit_dir or Path(config.paths.out_dir) / f"audit_{args.dataset_name}"
    report = evaluate(backend, questions, strategy, episode, tools, n_runs=n_runs,
                      dataset_name=args.dataset_name, audit_dir=audit_dir,
                      max_workers=args.workers)
    print(render_report(report, "table"), end="")
    metrics = report.datasets[0]
    print(f"action_error_rate: {metrics.action_error_rate:.2f}%")
    print(f"avg_turns: {metrics.avg_turns:.2f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(render_report(report, "csv"), encoding="utf-8")
        _write_manifest(out, config, [Path(args.questions)])
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    strategy = strategy_by_name(args.strategy)
    axis, _, fixed_raw = args.fixed.partition("=")
    vary_axis, _, values_raw = args.vary.partition("=")
    if axis not in ("n_pos", "n_neg") or vary_axis not in ("n_pos", "n_neg") or axis == vary_axis:
        raise ValueError("--fixed and --vary must name n_pos and n_neg, one each")
    values = tuple(int(v) for v in values_raw.split(",") if v != "")
    spec = SweepSpec(
        fixed_axis=axis,
        fixed_value=int(fixed_raw),
        values=values,
        strategy=strategy,
        seed=args.seed if args.seed is not None else config.seed,
        datasets=tuple(args.datasets.split(",")) if args.datasets else (),
    )
    with open(args.pool, "rb") as handle:
        pool = read_trajectories(handle)
    if not pool:
        raise ValueError("labeled pool is empty")
    task = _single_task({lt.trajectory.task for lt in pool}, "pool")
    usable = dedup_positives(filter_negatives(pool, task))
    positives = [lt for lt in usable if lt.label is Label.POSITIVE]
    negatives = [lt for lt in usable if lt.label is Label.NEGATIVE]

    out_dir = Path(args.out_dir)
    csv_text = run_sweep(spec, positives, negatives, out_dir)
    print(csv_text, end="")
    if args.plot:
        data_text, script_text = render_plot_script(csv_text, title=strategy.name)
        (out_dir / f"{strategy.name}.dat").write_text(data_text, encoding="utf-8")
        (out_dir / f"{strategy.name}.gp").write_text(script_text, encoding="utf-8")
    _write_manifest(out_dir / "sweep.csv", config, [Path(args.pool)])
    return 0


def _cmd_perplexity(args) -> int:
    config = _load_config(args)
    backend = _build_backend(args, config)
    with open(args.dev, "rb") as handle:
        labeled = read_trajectories(handle)
    if any(lt.label is not Label.POSITIVE for lt in labeled):
        raise ValueError("perplexity dev set must contain positive trajectories only")
    value = perplexity(backend, [lt.trajectory for lt in labeled])
    print(f"{value:.6f}")
    return 0


def _cmd_strategies(args) -> int:
    for strategy in builtin_strategies():
        negatives = "pos+neg" if strategy.include_negatives else "pos only"
        print(f"{strategy.name} ({strategy.placement}, {negatives})")
        if not strategy.class_prompts:
            print("  (no prompt strings attached)")
            continue
        print(f"  positive: {strategy.inference_prompt}")
        for k in range(strategy.buckets.class_count):
            print(f"  negative class {k}: {strategy.prompt_for_class(k)}")
        if strategy.buckets.boundaries:
            print(f"  quality boundaries: {list(strategy.buckets.boundaries)}")
    return 0


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="YAML config file")


def _add_backend_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["mock", "http"], default="mock")
    parser.add_argument("--script", default=None, help="mock backend script file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="negatune",
                                     description="Negative-aware agent tuning data factory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run episodes and write trajectory JSONL")
    _add_common(p)
    _add_backend_args(p)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--temps", default=None, help="comma-separated temperatures")
    p.add_argument("--mode", choices=["react", "cot"], default="react")
    p.add_argument("--max-turns", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--search-fixtures", default=None)
    p.add_argument("--live-search", action="store_true")
    p.set_defaults(handler=_cmd_collect)

    p = sub.add_parser("label", help="label trajectories against gold answers")
    _add_common(p)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["react", "cot"], default="react")
    p.set_defaults(handler=_cmd_label)

    p = sub.add_parser("build-dataset", help="build a loss-masked training mixture")
    _add_common(p)
    p.add_argument("--pool", required=True, help="labeled trajectory JSONL")
    p.add_argument("--strategy", required=True)
    p.add_argument("--n-pos", type=int, required=True)
    p.add_argument("--n-neg", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_build_dataset)

    p = sub.add_parser("evaluate", help="evaluate an endpoint on a test set")
    _add_common(p)
    _add_backend_args(p)
    p.add_argument("--questions", required=True)
    p.add_argument("--strategy", default="nat")
    p.add_argument("--mode", choices=["react", "cot"], default="react")
    p.add_argument("--n-runs", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-turns", type=int, default=None)
    p.add_argument("--dataset-name", default="testset")
    p.add_argument("--audit-dir", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="write per-run CSV here")
    p.add_argument("--search-fixtures", default=None)
    p.add_argument("--live-search", action="store_true")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("sweep", help="grid of dataset mixtures with statistics CSV")
    _add_common(p)
    p.add_argument("--pool", required=True)
    p.add_argument("--strategy", required=True)
    p.add_argument("--fixed", required=True, help="e.g. n_pos=2000")
    p.add_argument("--vary", required=True, help="e.g. n_neg=0,2000,4000")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--datasets", default=None, help="metric column names")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--plot", action="store_true", help="emit gnuplot data+script")
    p.set_defaults(handler=_cmd_sweep)

    p = sub.add_parser("perplexity", help="assistant-span perplexity of a dev set")
    _add_common(p)
    _add_backend_args(p)
    p.add_argument("--dev", required=True, help="labeled JSONL of positive trajectories")
    p.set_defaults(handler=_cmd_perplexity)

    p = sub.add_parser("strategies", help="list built-in prompt strategies")
    p.set_defaults(handler=_cmd_strategies)

    return parser


def cli_dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.handler(args)
    except (SchemaError, ConfigError, KeyError, PoolShortfall, CapabilityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, BackendError, SearchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
