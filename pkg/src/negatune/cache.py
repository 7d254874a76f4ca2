"""Content-addressed on-disk cache for model responses.

Keys are hashes of canonicalized requests (sorted keys, fixed
separators) so logically identical requests collide regardless of dict
ordering. Writes are atomic (temp file + rename) and concurrent misses
on one key call the fetcher at most once per process.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable


def canonical_key(request: dict) -> str:
    canonical = json.dumps(request, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._guard = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            lock = self._key_locks.get(key)
            if lock is None:
                lock = self._key_locks[key] = threading.Lock()
            return lock

    def lookup(self, request: dict) -> str | None:
        path = self._path(canonical_key(request))
        if not path.exists():
            return None
        entry = json.loads(path.read_text(encoding="utf-8"))
        return entry["value"]

    def store(self, request: dict, value: str) -> None:
        key = canonical_key(request)
        entry = {"key": key, "value": value, "created_at": time.time()}
        fd, tmp_name = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(entry, handle, ensure_ascii=False)
            os.replace(tmp_name, self._path(key))
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def get_or_fetch(self, request: dict, fetcher: Callable[[], str]) -> str:
        """Return the cached value, fetching and persisting on a miss.

        Fetcher failures propagate and nothing is cached, so a later call
        retries.
        """
        key = canonical_key(request)
        with self._lock_for(key):
            path = self._path(key)
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8"))["value"]
            value = fetcher()
            self.store(request, value)
            return value
