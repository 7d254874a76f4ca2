from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from negatune.core import (GoldAnswer, Label, LabeledTrajectory, Message, Outcome,
                           Question, Role, Task, Trajectory)


def make_messages(steps: list[tuple[str, str | None]], question_text: str = "q?",
                  system_text: str = "system prompt") -> tuple[Message, ...]:
    """steps: (assistant_text, observation_text | None) pairs; a None
    observation ends the trajectory on the assistant message."""
    messages = [Message(Role.SYSTEM, system_text), Message(Role.USER, question_text)]
    for assistant_text, observation in steps:
        messages.append(Message(Role.ASSISTANT, assistant_text))
        if observation is not None:
            messages.append(Message(Role.TOOL, observation))
    return tuple(messages)


def make_trajectory(qid: str = "q1", task: Task = Task.MATH,
                    steps: list[tuple[str, str | None]] | None = None,
                    final_answer: str | None = "2", outcome: Outcome | None = None,
                    temperature: float = 0.2, sample_index: int = 0,
                    tool_call_errors: int = 0, question_text: str | None = None) -> Trajectory:
    steps = list(steps) if steps else [("Thought: add\nAction: calculator[1+1]", "Observation: 2")]
    if final_answer is not None:
        steps.append((f"Action: finish[{final_answer}]", None))
        outcome = outcome or Outcome.finished(final_answer)
    else:
        outcome = outcome or Outcome("turn_limit_exceeded")
    return Trajectory(
        question_id=qid,
        task=task,
        messages=make_messages(steps, question_text=question_text or f"question {qid}"),
        outcome=outcome,
        model_id="mock",
        temperature=temperature,
        sample_index=sample_index,
        tool_call_errors=tool_call_errors,
    )


def make_labeled(trajectory: Trajectory | None = None, label: Label = Label.POSITIVE,
                 quality: float = 1.0, extracted: str | None = "2", **kwargs) -> LabeledTrajectory:
    return LabeledTrajectory(
        trajectory=trajectory or make_trajectory(**kwargs),
        label=label,
        quality=quality,
        extracted_answer=extracted,
    )


def make_question(qid: str = "q1", task: Task = Task.MATH, gold: str = "2",
                  text: str | None = None) -> Question:
    kind = {"math": "numeric", "multihop_qa": "text", "strategy_qa": "boolean"}[task.value]
    return Question(qid, text or f"question {qid}", GoldAnswer(kind, gold), task)


@pytest.fixture
def math_questions() -> list[Question]:
    return [make_question(f"q{i}", Task.MATH, str(i * 3)) for i in range(1, 8)]
