"""Negative-aware reformatting: filters, dedup, per-class prompt
attachment, training mixtures, and loss-masked dataset emission.

A strategy maps trajectory classes (positive, and one or more quality
buckets of negatives) to a prompt string attached to the user query as
a suffix or prefix. Inference always uses the positive-class prompt,
whatever the input's label.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Literal, Sequence

from .core import Label, LabeledTrajectory, Message, Role, Task
from .labeling import POSITIVE, QualityBuckets, bucket_quality

PROMPT_SEPARATOR = "\n"

NAT_POSITIVE_PROMPT = "Please generate a solution that **correctly** answers the question."
NAT_NEGATIVE_PROMPT = "Please generate a solution that **incorrectly** answers the question."
GOOD_PROMPT = "Please generate a **good** solution that answers the question."
BAD_PROMPT = "Please generate a **bad** solution that answers the question."
MOSTLY_CORRECT_PROMPT = (
    "Please generate a solution that is **mostly but not fully correct** in answering the question."
)
# 12-char alphanumeric prompt pair drawn once from seed 0 and frozen here;
# regenerating would silently change any dataset built with nat-random.
RANDOM_PROMPT_POSITIVE = "2yW4Acq9GFz6"
RANDOM_PROMPT_NEGATIVE = "Y1t9EwL56nGi"


@dataclass(frozen=True)
class PromptStrategy:
    name: str
    placement: Literal["suffix", "prefix"] = "suffix"
    class_prompts: dict = field(default_factory=dict)  # {POSITIVE | class index -> str}
    buckets: QualityBuckets = QualityBuckets()
    include_negatives: bool = True

    def __post_init__(self):
        if self.class_prompts:
            required = {POSITIVE, *range(self.buckets.class_count)}
            if set(self.class_prompts) != required:
                raise ValueError(
                    f"strategy {self.name}: prompts must cover classes {sorted(map(str, required))}"
                )

    def prompt_for_class(self, cls: int | str) -> str:
        return self.class_prompts.get(cls, "")

    @property
    def inference_prompt(self) -> str:
        return self.class_prompts.get(POSITIVE, "")


def builtin_strategies() -> list[PromptStrategy]:
    """The built-in strategy set, prompt strings frozen byte-exact."""
    nat_prompts = {POSITIVE: NAT_POSITIVE_PROMPT, 0: NAT_NEGATIVE_PROMPT}
    return [
        PromptStrategy("vanilla", include_negatives=False),
        PromptStrategy("nut"),
        PromptStrategy("nat", "suffix", dict(nat_prompts)),
        PromptStrategy("nat-swapped", "suffix", {POSITIVE: NAT_NEGATIVE_PROMPT, 0: NAT_POSITIVE_PROMPT}),
        PromptStrategy("nat-goodbad", "suffix", {POSITIVE: GOOD_PROMPT, 0: BAD_PROMPT}),
        PromptStrategy("nat-letters", "prefix", {POSITIVE: "A", 0: "B"}),
        PromptStrategy("nat-random", "prefix",
                       {POSITIVE: RANDOM_PROMPT_POSITIVE, 0: RANDOM_PROMPT_NEGATIVE}),
        PromptStrategy("nat2", "suffix",
                       {POSITIVE: NAT_POSITIVE_PROMPT, 0: NAT_NEGATIVE_PROMPT, 1: MOSTLY_CORRECT_PROMPT},
                       buckets=QualityBuckets((0.4,))),
    ]


def strategy_by_name(name: str) -> PromptStrategy:
    for strategy in builtin_strategies():
        if strategy.name == name:
            return strategy
    known = ", ".join(s.name for s in builtin_strategies())
    raise KeyError(f"unknown strategy {name!r}; built-ins: {known}")


@dataclass(frozen=True)
class DatasetRecord:
    messages: tuple[Message, ...]
    loss_mask: tuple[bool, ...]  # True = train on this message
    meta: dict

    def __post_init__(self):
        if len(self.messages) != len(self.loss_mask):
            raise ValueError("loss_mask length must match messages")
        for message, trained in zip(self.messages, self.loss_mask):
            if trained and message.role is not Role.ASSISTANT:
                raise ValueError("loss_mask may be true only on assistant messages")


def attach_prompt(text: str, prompt: str, placement: str) -> str:
    if not prompt:
        return text
    if placement == "prefix":
        return f"{prompt}{PROMPT_SEPARATOR}{text}"
    return f"{text}{PROMPT_SEPARATOR}{prompt}"


def apply_inference_prompt(text: str, strategy: PromptStrategy) -> str:
    return attach_prompt(text, strategy.inference_prompt, strategy.placement)


def apply_strategy(lt: LabeledTrajectory, strategy: PromptStrategy,
                   role: Literal["train", "inference"]) -> DatasetRecord | None:
    """Reformat one labeled trajectory, or None when the strategy drops it."""
    if role == "train":
        if lt.label is Label.NEGATIVE and not strategy.include_negatives:
            return None
        cls = POSITIVE if lt.label is Label.POSITIVE else bucket_quality(lt.quality, strategy.buckets)
    else:
        cls = POSITIVE
    prompt = strategy.prompt_for_class(cls)

    trajectory = lt.trajectory
    messages = list(trajectory.messages)
    messages[1] = Message(Role.USER, attach_prompt(messages[1].content, prompt, strategy.placement))
    mask = tuple(m.role is Role.ASSISTANT for m in messages)
    meta = {
        "source_id": f"{trajectory.question_id}/{trajectory.sample_index}",
        "label": lt.label.value,
        "quality": lt.quality,
        "strategy": strategy.name,
        "class": cls,
    }
    return DatasetRecord(tuple(messages), mask, meta)


def filter_negatives(pool: Sequence[LabeledTrajectory], task: Task) -> list[LabeledTrajectory]:
    """Drop unusable negatives; positives always pass through.

    Multihop QA keeps only finished negatives with nonzero overlap; the
    other tasks drop only aborted episodes.
    """
    kept = []
    for lt in pool:
        if lt.label is Label.POSITIVE:
            kept.append(lt)
            continue
        outcome = lt.trajectory.outcome.kind
        if task is Task.MULTIHOP_QA:
            if outcome == "finished" and lt.quality > 0.0:
                kept.append(lt)
        else:
            if outcome not in ("parse_failure", "tool_failure_abort"):
                kept.append(lt)
    return kept


def dedup_positives(pool: Sequence[LabeledTrajectory]) -> list[LabeledTrajectory]:
    """Keep one positive per question: lowest temperature, then lowest
    sample_index. Negatives pass through untouched."""
    best: dict[str, int] = {}
    for index, lt in enumerate(pool):
        if lt.label is not Label.POSITIVE:
            continue
        qid = lt.trajectory.question_id
        key = (lt.trajectory.temperature, lt.trajectory.sample_index)
        current = best.get(qid)
        if current is None:
            best[qid] = index
            continue
        held = pool[current]
        if key < (held.trajectory.temperature, held.trajectory.sample_index):
            best[qid] = index
    survivors = set(best.values())
    return [
        lt for index, lt in enumerate(pool)
        if lt.label is not Label.POSITIVE or index in survivors
    ]


class PoolShortfall(ValueError):
    pass


def build_mixture(pos: Sequence[LabeledTrajectory], neg: Sequence[LabeledTrajectory],
                  n_pos: int, n_neg: int, strategy: PromptStrategy,
                  seed: int) -> list[DatasetRecord]:
    """Sample without replacement, reformat, and shuffle; one seed governs
    selection and shuffle so re-runs are byte-identical."""
    if n_pos > len(pos):
        raise PoolShortfall(f"need {n_pos} positives, pool has {len(pos)}")
    if n_neg > len(neg):
        raise PoolShortfall(f"need {n_neg} negatives, pool has {len(neg)}")
    if n_neg > 0 and not strategy.include_negatives:
        raise ValueError(f"strategy {strategy.name!r} trains on positives only; n_neg must be 0")

    rng = random.Random(seed)
    chosen = list(rng.sample(list(pos), n_pos)) + list(rng.sample(list(neg), n_neg))
    records = [r for r in (apply_strategy(lt, strategy, "train") for lt in chosen) if r is not None]
    rng.shuffle(records)
    return records


def emit_dataset(records: Iterable[DatasetRecord], destination: IO[bytes]) -> None:
    """One JSON object per record; "train" mirrors the loss mask."""
    for record in records:
        obj = {
            "messages": [
                {"role": m.role.value, "content": m.content, "train": trained}
                for m, trained in zip(record.messages, record.loss_mask)
            ],
            "meta": record.meta,
        }
        line = json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(", ", ": "))
        destination.write((line + "\n").encode("utf-8"))


def read_dataset(source: IO[bytes]) -> list[DatasetRecord]:
    records = []
    for raw in source:
        text = raw.decode("utf-8").strip()
        if not text:
            continue
        obj = json.loads(text)
        messages = tuple(Message(Role(m["role"]), m["content"]) for m in obj["messages"])
        mask = tuple(bool(m["train"]) for m in obj["messages"])
        records.append(DatasetRecord(messages, mask, obj.get("meta", {})))
    return records
