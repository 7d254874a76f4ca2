"""Tool registry mapping action names to executors.

Executors never raise: every failure becomes a tool_error observation so
the agent loop can feed it back to the model and tally it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

from .calculator import CalcError, calc_eval
from .search import DEFAULT_TOP_K, Reranker, SearchClient, SearchError, format_results, search

RESERVED_ACTION = "finish"
_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")


@dataclass(frozen=True)
class ObservationResult:
    """Either ok(text) or tool_error(message); errors are single-line."""

    ok: bool
    text: str

    @staticmethod
    def success(text: str) -> "ObservationResult":
        return ObservationResult(True, text)

    @staticmethod
    def tool_error(message: str) -> "ObservationResult":
        return ObservationResult(False, message.splitlines()[0] if message else "tool error")


Executor = Callable[[str], ObservationResult]


class ToolSet:
    def __init__(self):
        self._registry: dict[str, Executor] = {}

    def register(self, name: str, executor: Executor) -> None:
        if name == RESERVED_ACTION:
            raise ValueError(f"{RESERVED_ACTION!r} is reserved and cannot be registered")
        if not _NAME_RE.match(name):
            raise ValueError(f"tool name must be a lowercase identifier, got {name!r}")
        self._registry[name] = executor

    def names(self) -> list[str]:
        return sorted(self._registry)

    def execute(self, name: str, argument: str) -> ObservationResult:
        executor = self._registry.get(name)
        if executor is None:
            return ObservationResult.tool_error(f"unknown tool: {name}")
        try:
            return executor(argument)
        except Exception as exc:  # executors should not raise; belt and braces
            return ObservationResult.tool_error(f"{name} failed: {exc}")


def calculator_executor(argument: str) -> ObservationResult:
    try:
        return ObservationResult.success(calc_eval(argument))
    except CalcError as exc:
        return ObservationResult.tool_error(str(exc))


def search_executor(client: SearchClient, reranker: Reranker,
                    top_k: int = DEFAULT_TOP_K) -> Executor:
    def execute(argument: str) -> ObservationResult:
        query = argument.strip()
        if not query:
            return ObservationResult.tool_error("empty search query")
        try:
            results = search(query, client, reranker, top_k=top_k)
        except SearchError:
            return ObservationResult.tool_error("search unavailable")
        return ObservationResult.success(format_results(results))

    return execute


def math_toolset() -> ToolSet:
    tools = ToolSet()
    tools.register("calculator", calculator_executor)
    return tools


def qa_toolset(client: SearchClient, reranker: Reranker, top_k: int = DEFAULT_TOP_K) -> ToolSet:
    tools = ToolSet()
    tools.register("search", search_executor(client, reranker, top_k=top_k))
    return tools
