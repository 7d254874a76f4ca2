"""Evaluation harness: runs agents on test sets, computes the metric
surface (accuracy or EM/F1, tool-error rate, average turns), measures
assistant-span perplexity, and drives dataset-size sweeps.
"""
from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .agent import EpisodeConfig, run_episode
from .backends import CapabilityError, ChatBackend
from .core import (Label, LabeledTrajectory, Question, Role, Task, Trajectory,
                   write_trajectories)
from .labeling import POSITIVE, action_error_rate, avg_turns, label_trajectory
from .reformat import (DatasetRecord, PoolShortfall, PromptStrategy,
                       apply_inference_prompt, build_mixture, emit_dataset)
from .tools import ToolSet


@dataclass(frozen=True)
class DatasetMetrics:
    name: str
    task: Task
    per_run: tuple[dict, ...]      # one {"accuracy": x} or {"em": x, "f1": y} per run
    mean: dict
    std: dict                      # population standard deviation
    action_error_rate: float
    avg_turns: float

    def primary_value(self) -> float:
        return self.mean.get("accuracy", self.mean.get("em", 0.0))


@dataclass(frozen=True)
class EvalReport:
    strategy: str
    n_runs: int
    datasets: tuple[DatasetMetrics, ...]


def _aggregate(per_run: list[dict]) -> tuple[dict, dict]:
    keys = per_run[0].keys()
    mean = {k: sum(r[k] for r in per_run) / len(per_run) for k in keys}
    std = {k: statistics.pstdev([r[k] for r in per_run]) for k in keys}
    return mean, std


def _run_metrics(task: Task, labeled: Sequence[LabeledTrajectory]) -> dict:
    n = len(labeled)
    if task is Task.MULTIHOP_QA:
        em = sum(1 for lt in labeled if lt.quality == 1.0) / n
        f1 = sum(lt.quality for lt in labeled) / n
        return {"em": 100.0 * em, "f1": 100.0 * f1}
    accuracy = sum(1 for lt in labeled if lt.label is Label.POSITIVE) / n
    return {"accuracy": 100.0 * accuracy}


def evaluate(backend: ChatBackend, testset: Sequence[Question], strategy: PromptStrategy,
             config: EpisodeConfig, tools: ToolSet | None, n_runs: int = 1,
             dataset_name: str = "testset", audit_dir: str | Path | None = None,
             max_workers: int = 1) -> EvalReport:
    """Run the test set n_runs times with label-blind (positive-prompt)
    inference and aggregate the per-run metrics. Questions within a run
    may evaluate concurrently; runs execute sequentially."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if not testset:
        raise ValueError("testset must be non-empty")
    task = testset[0].task

    def run_one(job: tuple[Question, int]) -> LabeledTrajectory:
        question, run_index = job
        prompted = replace(question, text=apply_inference_prompt(question.text, strategy))
        trajectory = run_episode(prompted, backend, tools, config, sample_index=run_index)
        return label_trajectory(trajectory, question, mode=config.mode)

    per_run: list[dict] = []
    all_labeled: list[LabeledTrajectory] = []
    for run_index in range(n_runs):
        jobs = [(question, run_index) for question in testset]
        if max_workers <= 1:
            labeled_run = [run_one(job) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                labeled_run = list(pool.map(run_one, jobs))
        per_run.append(_run_metrics(task, labeled_run))
        all_labeled.extend(labeled_run)
        if audit_dir is not None:
            audit_path = Path(audit_dir)
            audit_path.mkdir(parents=True, exist_ok=True)
            with open(audit_path / f"run_{run_index:02d}.jsonl", "wb") as handle:
                write_trajectories(labeled_run, handle)

    mean, std = _aggregate(per_run)
    metrics = DatasetMetrics(
        name=dataset_name,
        task=task,
        per_run=tuple(per_run),
        mean=mean,
        std=std,
        action_error_rate=action_error_rate([lt.trajectory for lt in all_labeled]),
        avg_turns=avg_turns([lt.trajectory for lt in all_labeled]),
    )
    return EvalReport(strategy=strategy.name, n_runs=n_runs, datasets=(metrics,))


def merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Combine single-dataset reports for one strategy into one report."""
    if not reports:
        raise ValueError("no reports to merge")
    strategy = reports[0].strategy
    n_runs = reports[0].n_runs
    datasets: list[DatasetMetrics] = []
    for report in reports:
        if report.strategy != strategy:
            raise ValueError("cannot merge reports for different strategies")
        datasets.extend(report.datasets)
    return EvalReport(strategy=strategy, n_runs=n_runs, datasets=tuple(datasets))


def perplexity(backend: ChatBackend, dev: Sequence[Trajectory]) -> float:
    """exp of the mean negative log-likelihood over assistant-message
    tokens only, mirroring the training loss mask."""
    if not backend.supports_logprobs:
        raise CapabilityError(f"backend {backend.model_id} does not expose token logprobs")
    if not dev:
        raise ValueError("dev set must be non-empty")
    total_logprob = 0.0
    total_tokens = 0
    for trajectory in dev:
        for index, message in enumerate(trajectory.messages):
            if message.role is not Role.ASSISTANT:
                continue
            context = trajectory.messages[:index]
            logprobs = backend.token_logprobs(context, message.content)
            total_logprob += sum(logprobs)
            total_tokens += len(logprobs)
    if total_tokens == 0:
        raise ValueError("dev trajectories contain no assistant tokens")
    return math.exp(-total_logprob / total_tokens)


# ---------------------------------------------------------------------------
# Sweeps.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    fixed_axis: str                 # "n_pos" | "n_neg"
    fixed_value: int
    values: tuple[int, ...]         # varying-axis grid, strictly ascending
    strategy: PromptStrategy
    seed: int = 0
    datasets: tuple[str, ...] = ()  # evaluation dataset names (metrics optional)

    def __post_init__(self):
        if self.fixed_axis not in ("n_pos", "n_neg"):
            raise ValueError("fixed_axis must be n_pos or n_neg")
        if list(self.values) != sorted(set(self.values)):
            raise ValueError("sweep values must be strictly ascending")

    @property
    def vary_axis(self) -> str:
        return "n_neg" if self.fixed_axis == "n_pos" else "n_pos"

    def grid(self) -> list[tuple[int, int]]:
        """(n_pos, n_neg) per point."""
        if self.fixed_axis == "n_pos":
            return [(self.fixed_value, v) for v in self.values]
        return [(v, self.fixed_value) for v in self.values]


# Optional hook evaluating an emitted dataset at one grid point; returns
# {dataset name -> metric value}. Without it metric cells read "n/a".
PointEvaluator = Callable[[int, int, Path], dict]


def _composition(records: Sequence[DatasetRecord], strategy: PromptStrategy) -> dict:
    class_counts = {POSITIVE: 0}
    for k in range(strategy.buckets.class_count):
        class_counts[k] = 0
    prompts = set()
    for record in records:
        cls = record.meta["class"]
        class_counts[cls] = class_counts.get(cls, 0) + 1
        prompts.add(strategy.prompt_for_class(cls))
    return {"class_counts": class_counts, "distinct_prompts": len(prompts)}


def run_sweep(spec: SweepSpec, pos_pool: Sequence[LabeledTrajectory],
              neg_pool: Sequence[LabeledTrajectory], emit_dir: str | Path,
              evaluator: PointEvaluator | None = None) -> str:
    """Build and emit a dataset per grid point; one CSV row per point even
    when a point fails. Returns the CSV text (also written to sweep.csv)."""
    emit_path = Path(emit_dir)
    emit_path.mkdir(parents=True, exist_ok=True)

    negative_classes = list(range(spec.strategy.buckets.class_count))
    header = ["axis_value", "n_pos", "n_neg", "status", "n_records", "n_class_positive"]
    header += [f"n_class_neg{k}" for k in negative_classes]
    header += ["distinct_prompts"]
    header += list(spec.datasets)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)

    for point_index, (n_pos, n_neg) in enumerate(spec.grid()):
        axis_value = spec.values[point_index]
        row: list = [axis_value, n_pos, n_neg]
        try:
            records = build_mixture(pos_pool, neg_pool, n_pos, n_neg, spec.strategy, spec.seed)
        except PoolShortfall as exc:
            row += [f"shortfall: {exc}", "", ""]
            row += ["" for _ in negative_classes]
            row += [""]
            row += ["n/a" for _ in spec.datasets]
            writer.writerow(row)
            continue

        dataset_path = emit_path / f"{spec.strategy.name}_pos{n_pos}_neg{n_neg}.jsonl"
        with open(dataset_path, "wb") as handle:
            emit_dataset(records, handle)

        stats = _composition(records, spec.strategy)
        row += ["ok", len(records), stats["class_counts"][POSITIVE]]
        row += [stats["class_counts"][k] for k in negative_classes]
        row += [stats["distinct_prompts"]]

        metrics = {}
        if evaluator is not None:
            metrics = evaluator(n_pos, n_neg, dataset_path)
        row += [metrics.get(name, "n/a") for name in spec.datasets]
        writer.writerow(row)

    csv_text = buffer.getvalue()
    (emit_path / "sweep.csv").write_text(csv_text, encoding="utf-8")
    return csv_text


# ---------------------------------------------------------------------------
# Report rendering.
# ---------------------------------------------------------------------------

def _format_cell(metrics: DatasetMetrics) -> str:
    if metrics.task is Task.MULTIHOP_QA:
        return f"{metrics.mean['em']:.2f}/{metrics.mean['f1']:.2f}"
    return f"{metrics.mean['accuracy']:.2f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Strategy rows x dataset columns plus an Average column; the best
    value per column is bolded."""
    if not reports:
        raise ValueError("no reports to render")
    dataset_names = [d.name for d in reports[0].datasets]
    for report in reports:
        if [d.name for d in report.datasets] != dataset_names:
            raise ValueError("reports cover different dataset columns")

    columns = dataset_names + ["Average"]
    cells: list[list[str]] = []
    primaries: list[list[float]] = []
    for report in reports:
        values = [d.primary_value() for d in report.datasets]
        average = sum(values) / len(values)
        cells.append([_format_cell(d) for d in report.datasets] + [f"{average:.2f}"])
        primaries.append(values + [average])

    for col in range(len(columns)):
        best = max(row[col] for row in primaries)
        for i, row in enumerate(primaries):
            if row[col] == best:
                cells[i][col] = f"**{cells[i][col]}**"

    widths = [
        max(len(columns[c]), max(len(cells[r][c]) for r in range(len(reports))))
        for c in range(len(columns))
    ]
    name_width = max(len("Strategy"), max(len(r.strategy) for r in reports))

    lines = []
    header = "Strategy".ljust(name_width) + "  " + "  ".join(
        columns[c].rjust(widths[c]) for c in range(len(columns)))
    lines.append(header)
    lines.append("-" * len(header))
    for report, row in zip(reports, cells):
        lines.append(report.strategy.ljust(name_width) + "  " + "  ".join(
            row[c].rjust(widths[c]) for c in range(len(columns))))
    return "\n".join(lines) + "\n"


def render_runs_csv(report: EvalReport) -> str:
    """Per-run rows followed by a mean row, one column set per dataset."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = ["run"]
    for d in report.datasets:
        header += [f"{d.name}/{k}" for k in sorted(d.per_run[0].keys())]
    writer.writerow(header)
    for run_index in range(report.n_runs):
        row: list = [run_index]
        for d in report.datasets:
            row += [d.per_run[run_index][k] for k in sorted(d.per_run[0].keys())]
        writer.writerow(row)
    mean_row: list = ["mean"]
    for d in report.datasets:
        mean_row += [d.mean[k] for k in sorted(d.per_run[0].keys())]
    writer.writerow(mean_row)
    return buffer.getvalue()


def render_report(reports: EvalReport | Sequence[EvalReport], fmt: str = "table") -> str:
    if fmt == "table":
        return render_table([reports] if isinstance(reports, EvalReport) else list(reports))
    if fmt == "csv":
        if not isinstance(reports, EvalReport):
            raise ValueError("csv format renders a single report")
        return render_runs_csv(reports)
    raise ValueError(f"unknown report format {fmt!r}")


def render_plot_script(sweep_csv: str, title: str = "sweep") -> tuple[str, str]:
    """Turn a sweep CSV into a (data file, gnuplot script) pair."""
    rows = list(csv.reader(io.StringIO(sweep_csv)))
    if not rows:
        raise ValueError("empty sweep CSV")
    header, data = rows[0], rows[1:]

    data_lines = ["# " + " ".join(["axis_value", "n_records"])]
    for row in data:
        record_count = row[4] if row[3] == "ok" else "?"
        data_lines.append(f"{row[0]} {record_count}")
    data_text = "\n".join(data_lines) + "\n"

    script = "\n".join([
        "set terminal pngcairo size 800,600",
        f"set output '{title}.png'",
        f"set title '{title}'",
        f"set xlabel '{header[0]}'",
        "set ylabel 'dataset records'",
        "set key left top",
        f"plot '{title}.dat' using 1:2 with linespoints title 'records'",
    ]) + "\n"
    return data_text, script
