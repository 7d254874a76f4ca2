"""ReAct interaction loop: action parsing, episode driving, and
multi-temperature trajectory collection.

The action surface is `Thought: <free text>` (optional) followed by
`Action: <name>[<argument>]` with balanced square brackets inside the
argument; `finish` is the reserved terminal action.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from typing import Sequence, Union

from .backends import BackendError, CachedBackend, ChatBackend
from .cache import ResponseCache
from .core import Message, Outcome, Question, Role, Task, Trajectory
from .tools import RESERVED_ACTION, ToolSet

DEFAULT_MAX_TURNS = 8
DEFAULT_TEMPERATURES = (0.2, 0.5, 0.7)
DEFAULT_STOP_SEQUENCES = ("Observation:",)
COT_ANSWER_MARKER = "The answer is"
UNPARSEABLE_FEEDBACK = "Could not parse action. Use Action: tool[input]."


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    argument: str


@dataclass(frozen=True)
class Finish:
    answer_text: str


@dataclass(frozen=True)
class Unparseable:
    raw_text: str


Action = Union[ToolCall, Finish, Unparseable]


@dataclass(frozen=True)
class ParsedStep:
    thought: str
    action: Action


_ACTION_LINE_RE = re.compile(r"^Action:[ \t]*", re.MULTILINE)
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def parse_step(assistant_text: str) -> ParsedStep:
    """Parse one assistant turn; anything off-grammar is Unparseable."""
    text = assistant_text.strip()
    unparseable = ParsedStep("", Unparseable(assistant_text))

    match = _ACTION_LINE_RE.search(text)
    if match is None:
        return unparseable

    preamble = text[: match.start()]
    if preamble.strip():
        if not preamble.startswith("Thought:"):
            return unparseable
        thought = preamble[len("Thought:"):].strip()
    else:
        thought = ""

    rest = text[match.end():]
    name_match = _NAME_RE.match(rest)
    if name_match is None:
        return unparseable
    name = name_match.group()

    cursor = name_match.end()
    while cursor < len(rest) and rest[cursor] in " \t":
        cursor += 1
    if cursor >= len(rest) or rest[cursor] != "[":
        return unparseable

    depth = 0
    arg_start = cursor + 1
    end = None
    for i in range(cursor, len(rest)):
        if rest[i] == "[":
            depth += 1
        elif rest[i] == "]":
            depth -= 1
            if depth == 0:
                end = i
                break
    if end is None:
        return unparseable
    if rest[end + 1:].strip():
        return unparseable

    argument = rest[arg_start:end]
    if name == RESERVED_ACTION:
        return ParsedStep(thought, Finish(argument.strip()))
    return ParsedStep(thought, ToolCall(name, argument))


# ---------------------------------------------------------------------------
# Episode configuration and system prompts.
# ---------------------------------------------------------------------------

def load_system_prompt(task: Task, mode: str = "react") -> str:
    name = "cot.txt" if mode == "cot" else f"{task.value}.txt"
    return resources.files("negatune.prompts").joinpath(name).read_text(encoding="utf-8").strip()


def load_default_icl_examples() -> tuple[Message, ...]:
    raw = resources.files("negatune.prompts").joinpath("cot_examples.json").read_text(encoding="utf-8")
    messages: list[Message] = []
    for pair in json.loads(raw):
        messages.append(Message(Role.USER, pair["user"]))
        messages.append(Message(Role.ASSISTANT, pair["assistant"]))
    return tuple(messages)


@dataclass(frozen=True)
class EpisodeConfig:
    max_turns: int = DEFAULT_MAX_TURNS
    mode: str = "react"  # "react" | "cot"
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = DEFAULT_STOP_SEQUENCES
    icl_examples: tuple[Message, ...] = ()
    system_prompt: str | None = None  # None = bundled fixture for the task

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.mode not in ("react", "cot"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.mode == "react" and self.icl_examples:
            raise ValueError("react mode takes no in-context examples")

    def resolved_icl_examples(self) -> tuple[Message, ...]:
        if self.mode != "cot":
            return ()
        return self.icl_examples or load_default_icl_examples()


def extract_cot_answer(text: str) -> str | None:
    """Text after the last "The answer is" marker, trailing punctuation stripped."""
    position = text.rfind(COT_ANSWER_MARKER)
    if position == -1:
        return None
    answer = text[position + len(COT_ANSWER_MARKER):].strip()
    return answer.rstrip(".!?,;:").strip()


def _observation(text: str) -> Message:
    return Message(Role.TOOL, f"Observation: {text}")


def run_episode(question: Question, backend: ChatBackend, tools: ToolSet | None,
                config: EpisodeConfig, sample_index: int = 0) -> Trajectory:
    """Drive one episode to termination and return the trajectory."""
    system_text = config.system_prompt or load_system_prompt(question.task, config.mode)
    messages: list[Message] = [Message(Role.SYSTEM, system_text), Message(Role.USER, question.text)]

    def finalize(outcome: Outcome, errors: int) -> Trajectory:
        return Trajectory(
            question_id=question.id,
            task=question.task,
            messages=tuple(messages),
            outcome=outcome,
            model_id=backend.model_id,
            temperature=config.temperature,
            sample_index=sample_index,
            tool_call_errors=errors,
        )

    if config.mode == "cot":
        wire = [messages[0], *config.resolved_icl_examples(), messages[1]]
        try:
            completion = backend.complete(wire, config.temperature,
                                          stop_sequences=config.stop_sequences)
        except BackendError:
            return finalize(Outcome("tool_failure_abort"), 0)
        messages.append(Message(Role.ASSISTANT, completion or " "))
        answer = extract_cot_answer(completion)
        outcome = Outcome.finished(answer) if answer is not None else Outcome("parse_failure")
        return finalize(outcome, 0)

    if tools is None:
        raise ValueError("react mode requires a toolset")

    tool_call_errors = 0
    consecutive_unparseable = 0
    for turn in range(1, config.max_turns + 1):
        try:
            completion = backend.complete(messages, config.temperature,
                                          stop_sequences=config.stop_sequences)
        except BackendError:
            return finalize(Outcome("tool_failure_abort"), tool_call_errors)
        messages.append(Message(Role.ASSISTANT, completion or " "))
        step = parse_step(completion)

        if isinstance(step.action, Finish):
            return finalize(Outcome.finished(step.action.answer_text), tool_call_errors)

        if isinstance(step.action, ToolCall):
            consecutive_unparseable = 0
            if turn == config.max_turns:
                break  # no further turn would see the observation
            result = tools.execute(step.action.tool_name, step.action.argument)
            if result.ok:
                messages.append(_observation(result.text))
            else:
                tool_call_errors += 1
                messages.append(_observation(f"Error: {result.text}"))
        else:
            tool_call_errors += 1
            consecutive_unparseable += 1
            if consecutive_unparseable >= 2:
                return finalize(Outcome("parse_failure"), tool_call_errors)
            if turn == config.max_turns:
                break
            messages.append(_observation(UNPARSEABLE_FEEDBACK))

    return finalize(Outcome("turn_limit_exceeded"), tool_call_errors)


def collect(questions: Sequence[Question], backend: ChatBackend, tools: ToolSet | None,
            temps: Sequence[float] = DEFAULT_TEMPERATURES, config: EpisodeConfig = EpisodeConfig(),
            cache: ResponseCache | None = None, max_workers: int = 1) -> list[Trajectory]:
    """Run every question at every temperature slot; never drops a failure.

    Output order is (question order) x (temperature slot), independent of
    worker scheduling, and sample_index records the slot.
    """
    if not temps:
        raise ValueError("temps must be non-empty")

    jobs = [
        (question, slot, temperature)
        for question in questions
        for slot, temperature in enumerate(temps)
    ]

    def run(job: tuple[Question, int, float]) -> Trajectory:
        question, slot, temperature = job
        episode_backend: ChatBackend = backend
        if cache is not None:
            episode_backend = CachedBackend(backend, cache, sample_index=slot)
        episode_config = replace(config, temperature=temperature)
        try:
            return run_episode(question, episode_backend, tools, episode_config, sample_index=slot)
        except Exception:
            # never abort the batch on one episode; record the failure
            return Trajectory(
                question_id=question.id,
                task=question.task,
                messages=(
                    Message(Role.SYSTEM, config.system_prompt or load_system_prompt(question.task, config.mode)),
                    Message(Role.USER, question.text),
                ),
                outcome=Outcome("tool_failure_abort"),
                model_id=backend.model_id,
                temperature=temperature,
                sample_index=slot,
            )

    if max_workers <= 1:
        return [run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, jobs))
