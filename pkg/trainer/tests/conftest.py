from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

FIXTURE8 = Path(__file__).parent / "data" / "fixture8.jsonl"


def synthetic_dataset(path: Path, n_records: int = 32, seed: int = 0) -> Path:
    """Small arithmetic chat records in the emitted-dataset schema."""
    rng = random.Random(seed)
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(n_records):
            a, b = rng.randint(1, 9), rng.randint(1, 9)
            record = {
                "messages": [
                    {"role": "system", "content": "add numbers", "train": False},
                    {"role": "user", "content": f"What is {a}+{b}?", "train": False},
                    {"role": "assistant", "content": f"Action: finish[{a + b}]", "train": True},
                ],
                "meta": {"source_id": f"s{i}/0", "label": "positive", "quality": 1.0,
                         "strategy": "nat", "class": "positive"},
            }
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def synthetic32(tmp_path) -> Path:
    return synthetic_dataset(tmp_path / "synthetic32.jsonl")
