"""Chat-model backends: a live chat-completions HTTP client, a scripted
deterministic mock for tests and dry runs, and a caching wrapper that
keys every call by its canonicalized request.
"""
from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .cache import ResponseCache
from .core import Message, Role

DEFAULT_MAX_TOKENS = 512


class BackendError(RuntimeError):
    """Transport failure that survived all retries."""


class CapabilityError(RuntimeError):
    """Backend cannot serve the requested capability (e.g. logprobs)."""


class ChatBackend(Protocol):
    model_id: str
    default_max_tokens: int

    def complete(self, messages: Sequence[Message], temperature: float,
                 max_tokens: int | None = None,
                 stop_sequences: Sequence[str] = ()) -> str: ...

    @property
    def supports_logprobs(self) -> bool: ...

    def token_logprobs(self, messages: Sequence[Message], completion_text: str) -> list[float]: ...


def _wire_messages(messages: Sequence[Message]) -> list[dict]:
    return [{"role": m.role.value, "content": m.content} for m in messages]


class HttpChatBackend:
    """Client for any endpoint speaking the de-facto chat-completions schema."""

    def __init__(self, endpoint_url: str, model_id: str, api_key: str | None = None,
                 max_tokens: int = DEFAULT_MAX_TOKENS, retries: int = 3,
                 timeout: float = 60.0, backoff: float = 0.5,
                 logprobs_capable: bool = False, client: httpx.Client | None = None):
        self.endpoint_url = endpoint_url.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.default_max_tokens = max_tokens
        self.retries = retries
        self.backoff = backoff
        self._logprobs_capable = logprobs_capable
        self._client = client or httpx.Client(timeout=timeout)

    @property
    def supports_logprobs(self) -> bool:
        return self._logprobs_capable

    def _post(self, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = self._client.post(self.endpoint_url, json=payload, headers=headers)
                if response.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"server error {response.status_code}",
                        request=response.request, response=response,
                    )
                response.raise_for_status()
                return response.json()
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise BackendError(f"chat endpoint failed after {self.retries} attempts: {last_error}")

    def complete(self, messages: Sequence[Message], temperature: float,
                 max_tokens: int | None = None,
                 stop_sequences: Sequence[str] = ()) -> str:
        payload = {
            "model": self.model_id,
            "messages": _wire_messages(messages),
            "temperature": temperature,
            "max_tokens": max_tokens if max_tokens is not None else self.default_max_tokens,
        }
        if stop_sequences:
            payload["stop"] = list(stop_sequences)
        data = self._post(payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}")

    def token_logprobs(self, messages: Sequence[Message], completion_text: str) -> list[float]:
        if not self._logprobs_capable:
            raise CapabilityError(f"backend {self.model_id} does not expose token logprobs")
        payload = {
            "model": self.model_id,
            "messages": _wire_messages(messages) + [{"role": "assistant", "content": completion_text}],
            "temperature": 0.0,
            "max_tokens": 0,
            "logprobs": True,
            "echo": True,
        }
        data = self._post(payload)
        try:
            values = data["choices"][0]["logprobs"]["token_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed logprobs response: {exc}")
        return [float(v) for v in values if v is not None]


class MockBackend:
    """Deterministic backend driven by a script file.

    Script schema (JSON):
        {
          "model_id": "mock",
          "token_logprob": -0.6931471805599453,        # optional
          "default_turns": ["Action: finish[0]"],
          "episodes": [
            {"match": "<substring of the user query>",
             "turns": ["...", "..."],
             "turns_by_temperature": {"0.5": ["..."]}}  # optional override
          ]
        }

    The episode whose "match" occurs in the last user message supplies
    the assistant text for turn k (k = assistant messages so far); turn
    indexes past the end repeat the final entry.
    """

    def __init__(self, script: dict | str | Path, max_tokens: int = DEFAULT_MAX_TOKENS):
        if not isinstance(script, dict):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        self.script = script
        self.model_id = script.get("model_id", "mock")
        self.default_max_tokens = max_tokens
        self._token_logprob = script.get("token_logprob")

    @property
    def supports_logprobs(self) -> bool:
        return self._token_logprob is not None

    def _turns_for(self, messages: Sequence[Message], temperature: float) -> list[str]:
        user_text = ""
        for m in messages:
            if m.role is Role.USER:
                user_text = m.content
        for episode in self.script.get("episodes", []):
            if episode.get("match", "") and episode["match"] in user_text:
                by_temp = episode.get("turns_by_temperature", {})
                return by_temp.get(str(temperature), episode.get("turns", []))
        return self.script.get("default_turns", [])

    def complete(self, messages: Sequence[Message], temperature: float,
                 max_tokens: int | None = None,
                 stop_sequences: Sequence[str] = ()) -> str:
        turns = self._turns_for(messages, temperature)
        if not turns:
            raise BackendError("mock script has no turns for this query")
        turn_index = sum(1 for m in messages if m.role is Role.ASSISTANT)
        text = turns[min(turn_index, len(turns) - 1)]
        for stop in stop_sequences:
            cut = text.find(stop)
            if cut != -1:
                text = text[:cut]
        return text

    def token_logprobs(self, messages: Sequence[Message], completion_text: str) -> list[float]:
        if self._token_logprob is None:
            raise CapabilityError("mock script defines no token_logprob")
        return [float(self._token_logprob)] * len(completion_text.split())


class CachedBackend:
    """Routes complete() through the response cache; sample_index is part
    of the key so repeated samples at one temperature stay distinct."""

    def __init__(self, inner: ChatBackend, cache: ResponseCache, sample_index: int = 0):
        self.inner = inner
        self.cache = cache
        self.sample_index = sample_index
        self.model_id = inner.model_id
        self.default_max_tokens = inner.default_max_tokens

    @property
    def supports_logprobs(self) -> bool:
        return self.inner.supports_logprobs

    def complete(self, messages: Sequence[Message], temperature: float,
                 max_tokens: int | None = None,
                 stop_sequences: Sequence[str] = ()) -> str:
        resolved = max_tokens if max_tokens is not None else self.inner.default_max_tokens
        request = {
            "backend": self.inner.model_id,
            "messages": _wire_messages(messages),
            "temperature": temperature,
            "max_tokens": resolved,
            "sample_index": self.sample_index,
            "stop": list(stop_sequences),
        }
        return self.cache.get_or_fetch(
            request,
            lambda: self.inner.complete(messages, temperature, max_tokens, stop_sequences),
        )

    def token_logprobs(self, messages: Sequence[Message], completion_text: str) -> list[float]:
        return self.inner.token_logprobs(messages, completion_text)
