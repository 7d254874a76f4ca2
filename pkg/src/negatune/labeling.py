"""Answer extraction, match metrics, trajectory labeling, and the
behavioral diagnostics (tool-error rate, average turns).

Text normalization and EM/F1 follow the standard extractive-QA
definitions: lowercase, strip punctuation, drop articles, collapse
whitespace; F1 is the harmonic mean of token precision/recall over
multiset overlap.
"""
from __future__ import annotations

import re
import string
from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .agent import Finish, ToolCall, Unparseable, extract_cot_answer, parse_step
from .core import Label, LabeledTrajectory, Question, Role, Task, Trajectory

POSITIVE = "positive"  # bucket sentinel for quality == 1.0

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")


def normalize_text(s: str) -> str:
    s = s.lower().translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_text(pred) == normalize_text(gold))


def token_f1(pred: str, gold: str) -> float:
    """Harmonic mean of token precision and recall over multiset overlap.

    2PR/(P+R) reduces to 2c/(|pred|+|gold|), so the result is one exact
    integer division and reproducible bit-for-bit.
    """
    pred_tokens = normalize_text(pred).split()
    gold_tokens = normalize_text(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    return (2 * common) / (len(pred_tokens) + len(gold_tokens))


_CURRENCY = "$€£¥"
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d+)?|\.\d+)$")
_RATIONAL_RE = re.compile(r"^([+-]?\d+)\s*/\s*(\d+)(\s*\(.*\))?$")
_TOLERANCE = Fraction(1, 10 ** 6)


def parse_numeric(pred: str) -> Fraction | None:
    """Parse a prediction as an exact decimal or p/q rational, or None."""
    text = pred.strip().replace(",", "")
    while text and text[0] in _CURRENCY:
        text = text[1:].strip()
    text = text.rstrip(".").strip()
    if _NUMBER_RE.match(text):
        return Fraction(text)
    m = _RATIONAL_RE.match(text)
    if m:
        denominator = int(m.group(2))
        if denominator == 0:
            return None
        return Fraction(int(m.group(1)), denominator)
    return None


def numeric_match(pred: str, gold: Fraction | str) -> bool:
    gold_value = gold if isinstance(gold, Fraction) else Fraction(gold)
    pred_value = parse_numeric(pred)
    if pred_value is None:
        return False
    return abs(pred_value - gold_value) <= _TOLERANCE * max(Fraction(1), abs(gold_value))


def extract_answer(trajectory: Trajectory, mode: str = "react") -> str | None:
    """Predicted answer text, or None when the episode produced none."""
    if mode == "cot":
        last_assistant = next(
            (m for m in reversed(trajectory.messages) if m.role is Role.ASSISTANT), None
        )
        if last_assistant is None:
            return None
        return extract_cot_answer(last_assistant.content)
    if trajectory.outcome.kind != "finished":
        return None
    last_assistant = next(
        (m for m in reversed(trajectory.messages) if m.role is Role.ASSISTANT), None
    )
    if last_assistant is None:
        return None
    step = parse_step(last_assistant.content)
    if isinstance(step.action, Finish):
        return step.action.answer_text
    return None


def label_trajectory(trajectory: Trajectory, question: Question, mode: str = "react") -> LabeledTrajectory:
    """Assign positive/negative and the quality score for one trajectory."""
    if trajectory.question_id != question.id:
        raise ValueError(
            f"trajectory {trajectory.question_id!r} does not belong to question {question.id!r}"
        )
    pred = extract_answer(trajectory, mode)
    if pred is None:
        return LabeledTrajectory(trajectory, Label.NEGATIVE, 0.0, None)

    if question.task is Task.MATH:
        correct = numeric_match(pred, question.gold.as_fraction())
        quality = 1.0 if correct else 0.0
    elif question.task is Task.STRATEGY_QA:
        normalized = normalize_text(pred)
        correct = normalized in ("yes", "no") and normalized == question.gold.value
        quality = 1.0 if correct else 0.0
    else:
        quality = token_f1(pred, question.gold.value)
        correct = quality == 1.0

    label = Label.POSITIVE if correct else Label.NEGATIVE
    return LabeledTrajectory(trajectory, label, quality, pred)


@dataclass(frozen=True)
class QualityBuckets:
    """Partition of [0, 1) into negative classes; quality 1.0 is always
    the positive class. Class k covers [boundary_{k-1}, boundary_k)."""

    boundaries: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boundaries", tuple(self.boundaries))
        for value in self.boundaries:
            if not 0.0 < value < 1.0:
                raise ValueError(f"bucket boundary {value} outside (0, 1)")
        if list(self.boundaries) != sorted(set(self.boundaries)):
            raise ValueError("bucket boundaries must be strictly ascending")

    @property
    def class_count(self) -> int:
        return len(self.boundaries) + 1


def bucket_quality(quality: float, buckets: QualityBuckets) -> int | str:
    """Negative class index for a quality score, or POSITIVE for 1.0."""
    if not 0.0 <= quality <= 1.0:
        raise ValueError(f"quality {quality} out of range [0, 1]")
    if quality == 1.0:
        return POSITIVE
    return bisect_right(buckets.boundaries, quality)


def count_tool_attempts(trajectory: Trajectory) -> int:
    """Tool-call attempts: assistant steps parsed as tool calls or as
    unparseable output (the feedback observations both stem from)."""
    attempts = 0
    for message in trajectory.messages:
        if message.role is not Role.ASSISTANT:
            continue
        step = parse_step(message.content)
        if isinstance(step.action, (ToolCall, Unparseable)):
            attempts += 1
    return attempts


def action_error_rate(trajectories: Sequence[Trajectory]) -> float:
    """Percent of tool-call attempts that failed."""
    errors = sum(t.tool_call_errors for t in trajectories)
    attempts = sum(count_tool_attempts(t) for t in trajectories)
    if attempts == 0:
        return 0.0
    return 100.0 * errors / attempts


def avg_turns(trajectories: Sequence[Trajectory]) -> float:
    if not trajectories:
        raise ValueError("avg_turns needs at least one trajectory")
    return sum(t.assistant_turns for t in trajectories) / len(trajectories)
