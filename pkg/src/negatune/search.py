"""Web-search tool client with pluggable result re-ranking.

Raw results come from either a live Serper-compatible endpoint or an
on-disk fixture directory (JSON files keyed by query hash). Candidates
are re-scored against the query by a Reranker; two scorers are bundled:
a remote-embedding cosine scorer and an offline lexical overlap scorer.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

SNIPPET_LIMIT = 300
DEFAULT_TOP_K = 3


class SearchError(RuntimeError):
    """Raised when raw results cannot be fetched."""


@dataclass(frozen=True)
class SearchResult:
    title: str
    snippet: str
    url: str
    rank_score: float = 0.0


@dataclass(frozen=True)
class Ranking:
    """Reranker output: (candidate index, score) pairs sorted by score desc."""

    pairs: tuple[tuple[int, float], ...]
    used_fallback: bool = False


class SearchClient(Protocol):
    def fetch(self, query: str) -> list[SearchResult]: ...


class Reranker(Protocol):
    def score(self, query: str, candidates: list[str]) -> list[float]: ...


_WORD_RE = re.compile(r"[a-z0-9]+")


def _lex_tokens(text: str) -> frozenset[str]:
    return frozenset(_WORD_RE.findall(text.lower()))


class LexicalReranker:
    """Jaccard overlap of lowercased alphanumeric tokens; scores in [0, 1]."""

    def score(self, query: str, candidates: list[str]) -> list[float]:
        q = _lex_tokens(query)
        scores = []
        for candidate in candidates:
            c = _lex_tokens(candidate)
            union = q | c
            scores.append(len(q & c) / len(union) if union else 1.0)
        return scores


class RemoteEmbeddingReranker:
    """Cosine similarity over vectors from an embeddings HTTP endpoint.

    Cosine is mapped from [-1, 1] to [0, 1] so scores share a scale with
    the lexical scorer.
    """

    def __init__(self, endpoint_url: str, timeout: float = 10.0, client: httpx.Client | None = None):
        self.endpoint_url = endpoint_url
        self.timeout = timeout
        self._client = client or httpx.Client(timeout=timeout)

    def _embed(self, texts: list[str]) -> list[list[float]]:
        response = self._client.post(self.endpoint_url, json={"input": texts})
        response.raise_for_status()
        payload = response.json()
        if isinstance(payload, dict) and "data" in payload:
            return [item["embedding"] for item in payload["data"]]
        return payload

    def score(self, query: str, candidates: list[str]) -> list[float]:
        vectors = self._embed([query] + candidates)
        q, rest = vectors[0], vectors[1:]
        return [(1.0 + _cosine(q, v)) / 2.0 for v in rest]


def _cosine(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def rerank(query: str, candidates: list[str], reranker: Reranker,
           fallback: Reranker | None = None) -> Ranking:
    """Score candidates and sort; equal scores keep their original order.

    A failing remote scorer falls back to the lexical scorer and flags it.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    used_fallback = False
    try:
        scores = reranker.score(query, candidates)
    except Exception:
        if fallback is None:
            fallback = LexicalReranker()
        scores = fallback.score(query, candidates)
        used_fallback = True
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return Ranking(tuple((i, scores[i]) for i in order), used_fallback=used_fallback)


class FixtureSearchClient:
    """Serves results from <dir>/<sha256(query)>.json files."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    @staticmethod
    def path_for_query(fixture_dir: str | Path, query: str) -> Path:
        digest = hashlib.sha256(query.encode("utf-8")).hexdigest()
        return Path(fixture_dir) / f"{digest}.json"

    def fetch(self, query: str) -> list[SearchResult]:
        path = self.path_for_query(self.fixture_dir, query)
        if not path.exists():
            return []
        entries = json.loads(path.read_text(encoding="utf-8"))
        return [
            SearchResult(title=e.get("title", ""), snippet=e.get("snippet", ""), url=e.get("url", ""))
            for e in entries
        ]


class SerperSearchClient:
    """Live client for a Serper-compatible endpoint (POST {"q": query})."""

    def __init__(self, endpoint_url: str, api_key: str, retries: int = 3,
                 timeout: float = 15.0, backoff: float = 0.5,
                 client: httpx.Client | None = None):
        self.endpoint_url = endpoint_url
        self.api_key = api_key
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def fetch(self, query: str) -> list[SearchResult]:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                response = self._client.post(
                    self.endpoint_url,
                    json={"q": query},
                    headers={"X-API-KEY": self.api_key, "Content-Type": "application/json"},
                )
                response.raise_for_status()
                payload = response.json()
                return [
                    SearchResult(
                        title=e.get("title", ""),
                        snippet=e.get("snippet", ""),
                        url=e.get("link", e.get("url", "")),
                    )
                    for e in payload.get("organic", [])
                ]
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise SearchError(f"search unavailable: {last_error}")


def search(query: str, client: SearchClient, reranker: Reranker,
           top_k: int = DEFAULT_TOP_K) -> list[SearchResult]:
    """Fetch, rerank against the query, and keep the top_k results."""
    if not query:
        raise ValueError("query must be non-empty")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    raw = client.fetch(query)
    if not raw:
        return []
    ranking = rerank(query, [f"{r.title} {r.snippet}" for r in raw], reranker)
    return [
        SearchResult(title=raw[i].title, snippet=raw[i].snippet, url=raw[i].url, rank_score=score)
        for i, score in ranking.pairs[:top_k]
    ]


def format_results(results: list[SearchResult]) -> str:
    """Observation text: one "[i] title — snippet" line per result."""
    if not results:
        return "No results found."
    lines = []
    for i, r in enumerate(results, start=1):
        snippet = r.snippet[:SNIPPET_LIMIT]
        lines.append(f"[{i}] {r.title} — {snippet}")
    return "\n".join(lines)
