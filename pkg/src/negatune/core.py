"""Domain types and JSONL serialization shared by every stage of the pipeline.

All types are immutable after construction and safe to share between
workers. Numeric gold answers are kept as decimal strings end to end so
files round-trip bit-exactly regardless of platform float formatting.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import IO, Iterable, Union


class Task(str, Enum):
    MATH = "math"
    MULTIHOP_QA = "multihop_qa"
    STRATEGY_QA = "strategy_qa"


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


class Label(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class SchemaError(ValueError):
    """Malformed line or invariant violation in a JSONL file."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        suffix = f" (field: {field})" if field else ""
        super().__init__(f"{prefix}{message}{suffix}")


_DECIMAL_RE = re.compile(r"^-?(\d+(\.\d+)?|\.\d+)$")


@dataclass(frozen=True)
class GoldAnswer:
    """Tagged gold answer: numeric (exact decimal string), text, or yes/no."""

    kind: str  # "numeric" | "text" | "boolean"
    value: str

    def __post_init__(self):
        if self.kind not in ("numeric", "text", "boolean"):
            raise ValueError(f"unknown gold answer kind: {self.kind!r}")
        if self.kind == "numeric" and not _DECIMAL_RE.match(self.value):
            raise ValueError(f"numeric gold answer is not a decimal string: {self.value!r}")
        if self.kind == "boolean" and self.value not in ("yes", "no"):
            raise ValueError(f"boolean gold answer must be 'yes' or 'no', got {self.value!r}")

    def as_fraction(self) -> Fraction:
        if self.kind != "numeric":
            raise ValueError("not a numeric gold answer")
        return Fraction(self.value)


_TASK_GOLD_KIND = {
    Task.MATH: "numeric",
    Task.MULTIHOP_QA: "text",
    Task.STRATEGY_QA: "boolean",
}


@dataclass(frozen=True)
class Question:
    id: str
    text: str
    gold: GoldAnswer
    task: Task

    def __post_init__(self):
        if not self.id:
            raise ValueError("question id must be non-empty")
        expected = _TASK_GOLD_KIND[self.task]
        if self.gold.kind != expected:
            raise ValueError(
                f"question {self.id}: task {self.task.value} requires a {expected} "
                f"gold answer, got {self.gold.kind}"
            )


@dataclass(frozen=True)
class Message:
    role: Role
    content: str

    def __post_init__(self):
        if self.role in (Role.ASSISTANT, Role.TOOL) and not self.content:
            raise ValueError(f"{self.role.value} message content must be non-empty")


@dataclass(frozen=True)
class Outcome:
    """Episode termination: 'finished' carries the final answer text."""

    kind: str  # "finished" | "turn_limit_exceeded" | "parse_failure" | "tool_failure_abort"
    answer: str | None = None

    KINDS = ("finished", "turn_limit_exceeded", "parse_failure", "tool_failure_abort")

    def __post_init__(self):
        if self.kind not in Outcome.KINDS:
            raise ValueError(f"unknown outcome kind: {self.kind!r}")
        if (self.kind == "finished") != (self.answer is not None):
            raise ValueError("answer text is carried by 'finished' outcomes only")

    @staticmethod
    def finished(answer: str) -> "Outcome":
        return Outcome("finished", answer)

    def to_json(self) -> object:
        if self.kind == "finished":
            return {"finished": self.answer}
        return self.kind

    @staticmethod
    def from_json(value: object) -> "Outcome":
        if isinstance(value, str):
            return Outcome(value)
        if isinstance(value, dict) and list(value) == ["finished"]:
            return Outcome("finished", str(value["finished"]))
        raise ValueError(f"bad outcome value: {value!r}")


@dataclass(frozen=True)
class Trajectory:
    """One agent episode, from system prompt to termination."""

    question_id: str
    task: Task
    messages: tuple[Message, ...]
    outcome: Outcome
    model_id: str
    temperature: float
    sample_index: int
    tool_call_errors: int = 0

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        _validate_message_shape(self.messages)
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")
        if self.tool_call_errors < 0:
            raise ValueError("tool_call_errors must be >= 0")

    @property
    def assistant_turns(self) -> int:
        return sum(1 for m in self.messages if m.role is Role.ASSISTANT)

    @property
    def tool_messages(self) -> int:
        return sum(1 for m in self.messages if m.role is Role.TOOL)


def validate_outcome_consistency(trajectory: "Trajectory") -> None:
    """A finish action in the last assistant message forces a matching
    finished outcome; a finished outcome must be recoverable from either
    the finish action or the reasoning-mode answer marker."""
    from .agent import Finish, extract_cot_answer, parse_step  # deferred; agent depends on core

    last_assistant = next(
        (m for m in reversed(trajectory.messages) if m.role is Role.ASSISTANT), None
    )
    step_answer = None
    if last_assistant is not None:
        action = parse_step(last_assistant.content).action
        if isinstance(action, Finish):
            step_answer = action.answer_text

    if step_answer is not None:
        if trajectory.outcome.kind != "finished" or trajectory.outcome.answer != step_answer:
            raise ValueError(
                "last assistant message finishes with "
                f"{step_answer!r} but outcome is {trajectory.outcome.to_json()}"
            )
    elif trajectory.outcome.kind == "finished":
        cot_answer = extract_cot_answer(last_assistant.content) if last_assistant else None
        if cot_answer != trajectory.outcome.answer:
            raise ValueError(
                f"finished outcome {trajectory.outcome.answer!r} is not recoverable "
                "from the last assistant message"
            )


def _validate_message_shape(messages: tuple[Message, ...]) -> None:
    """Enforce system, user, then strictly alternating assistant/tool."""
    if len(messages) < 2:
        raise ValueError("trajectory needs at least a system and a user message")
    if messages[0].role is not Role.SYSTEM:
        raise ValueError("first message must be the system prompt")
    if messages[1].role is not Role.USER:
        raise ValueError("second message must be the user query")
    for i, msg in enumerate(messages[2:], start=2):
        expected = Role.ASSISTANT if i % 2 == 0 else Role.TOOL
        if msg.role is not expected:
            raise ValueError(
                f"message {i} must be {expected.value} (assistant/tool alternation), "
                f"got {msg.role.value}"
            )


@dataclass(frozen=True)
class LabeledTrajectory:
    trajectory: Trajectory
    label: Label
    quality: float
    extracted_answer: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.quality <= 1.0:
            raise ValueError(f"quality {self.quality} out of range [0, 1]")
        if self.label is Label.POSITIVE and self.quality != 1.0:
            raise ValueError("positive label requires quality == 1.0")
        if self.label is Label.NEGATIVE and self.quality == 1.0:
            raise ValueError("negative label requires quality < 1.0")
        if self.trajectory.task in (Task.MATH, Task.STRATEGY_QA) and self.quality not in (0.0, 1.0):
            raise ValueError(f"{self.trajectory.task.value} quality must be 0.0 or 1.0")


# ---------------------------------------------------------------------------
# JSONL serialization.
#
# Field order is fixed so byte-identical re-runs are diffable:
#   question_id, task, model_id, temperature, sample_index, outcome,
#   extracted_answer, label, quality, tool_call_errors, messages
# Unlabeled trajectories use null for extracted_answer/label/quality.
# ---------------------------------------------------------------------------

def _record_dict(t: Trajectory, labeled: LabeledTrajectory | None) -> dict:
    return {
        "question_id": t.question_id,
        "task": t.task.value,
        "model_id": t.model_id,
        "temperature": t.temperature,
        "sample_index": t.sample_index,
        "outcome": t.outcome.to_json(),
        "extracted_answer": labeled.extracted_answer if labeled else None,
        "label": labeled.label.value if labeled else None,
        "quality": labeled.quality if labeled else None,
        "messages": [{"role": m.role.value, "content": m.content} for m in t.messages],
        "tool_call_errors": t.tool_call_errors,
    }


_SCHEMA_ORDER = [
    "question_id", "task", "model_id", "temperature", "sample_index", "outcome",
    "extracted_answer", "label", "quality", "tool_call_errors", "messages",
]


def _dump_line(record: dict) -> str:
    ordered = {k: record[k] for k in _SCHEMA_ORDER}
    # allow_nan=False rejects NaN/inf quality instead of emitting invalid JSON
    return json.dumps(ordered, ensure_ascii=False, allow_nan=False, separators=(", ", ": "))


def write_raw_trajectories(trajectories: Iterable[Trajectory], destination: IO[bytes]) -> None:
    for t in trajectories:
        destination.write((_dump_line(_record_dict(t, None)) + "\n").encode("utf-8"))


def write_trajectories(trajectories: Iterable[LabeledTrajectory], destination: IO[bytes]) -> None:
    for lt in trajectories:
        destination.write((_dump_line(_record_dict(lt.trajectory, lt)) + "\n").encode("utf-8"))


def _parse_record(obj: dict, line: int) -> Union[Trajectory, LabeledTrajectory]:
    def need(key: str):
        if key not in obj:
            raise SchemaError("missing field", line=line, field=key)
        return obj[key]

    try:
        messages = tuple(
            Message(Role(m["role"]), m["content"]) for m in need("messages")
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad message entry: {exc}", line=line, field="messages")
    except ValueError as exc:
        raise SchemaError(str(exc), line=line, field="messages")

    try:
        trajectory = Trajectory(
            question_id=need("question_id"),
            task=Task(need("task")),
            messages=messages,
            outcome=Outcome.from_json(need("outcome")),
            model_id=need("model_id"),
            temperature=need("temperature"),
            sample_index=need("sample_index"),
            tool_call_errors=need("tool_call_errors"),
        )
    except (ValueError, TypeError) as exc:
        raise SchemaError(str(exc), line=line, field="trajectory")

    try:
        validate_outcome_consistency(trajectory)
    except ValueError as exc:
        raise SchemaError(str(exc), line=line, field="outcome")

    label = obj.get("label")
    quality = obj.get("quality")
    if label is None and quality is None:
        return trajectory
    if label is None or quality is None:
        raise SchemaError("label and quality must be both present or both null",
                          line=line, field="label")
    if not isinstance(quality, (int, float)) or not 0.0 <= quality <= 1.0:
        raise SchemaError("quality out of range", line=line, field="quality")
    try:
        return LabeledTrajectory(
            trajectory=trajectory,
            label=Label(label),
            quality=float(quality),
            extracted_answer=obj.get("extracted_answer"),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), line=line, field="label")


def _read_records(source: IO[bytes]) -> list[tuple[int, dict]]:
    records = []
    for lineno, raw in enumerate(source, start=1):
        text = raw.decode("utf-8").strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON: {exc.msg}", line=lineno)
        if not isinstance(obj, dict):
            raise SchemaError("record is not a JSON object", line=lineno)
        records.append((lineno, obj))
    return records


def read_trajectories(source: IO[bytes]) -> list[LabeledTrajectory]:
    out = []
    for lineno, obj in _read_records(source):
        parsed = _parse_record(obj, lineno)
        if not isinstance(parsed, LabeledTrajectory):
            raise SchemaError("trajectory is unlabeled", line=lineno, field="label")
        out.append(parsed)
    return out


def read_raw_trajectories(source: IO[bytes]) -> list[Trajectory]:
    out = []
    for lineno, obj in _read_records(source):
        parsed = _parse_record(obj, lineno)
        out.append(parsed.trajectory if isinstance(parsed, LabeledTrajectory) else parsed)
    return out


# ---------------------------------------------------------------------------
# Question files: {"id", "task", "text", "gold": {"kind", "value"}} per line.
# ---------------------------------------------------------------------------

def write_questions(questions: Iterable[Question], destination: IO[bytes]) -> None:
    for q in questions:
        record = {
            "id": q.id,
            "task": q.task.value,
            "text": q.text,
            "gold": {"kind": q.gold.kind, "value": q.gold.value},
        }
        destination.write(
            (json.dumps(record, ensure_ascii=False, separators=(", ", ": ")) + "\n").encode("utf-8")
        )


def read_questions(source: IO[bytes]) -> list[Question]:
    questions = []
    seen: set[str] = set()
    for lineno, obj in _read_records(source):
        try:
            gold = obj["gold"]
            q = Question(
                id=obj["id"],
                text=obj["text"],
                gold=GoldAnswer(gold["kind"], gold["value"]),
                task=Task(obj["task"]),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad question record: {exc}", line=lineno)
        except ValueError as exc:
            raise SchemaError(str(exc), line=lineno)
        if q.id in seen:
            raise SchemaError(f"duplicate question id {q.id!r}", line=lineno, field="id")
        seen.add(q.id)
        questions.append(q)
    return questions
