"""Dataset JSONL loading and label-mask construction.

Input schema (one JSON object per line):
    {"messages": [{"role": ..., "content": ..., "train": bool}, ...], "meta": {...}}

Tokens from train=false messages get the ignore label (-100); tokens
from train=true messages are their own labels. Role-marker tokens are
always ignored so template boundaries never leak into the loss.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

IGNORE_INDEX = -100

ROLES = ("system", "user", "assistant", "tool")


class DatasetError(ValueError):
    pass


@dataclass
class ByteChatTemplate:
    """Self-contained byte-level chat template for the built-in tiny model.

    Vocabulary: 256 byte values, then PAD, END, and one marker per role.
    """

    max_len: int = 2048

    PAD = 256
    END = 257
    ROLE_BASE = 258  # system, user, assistant, tool

    @property
    def vocab_size(self) -> int:
        return self.ROLE_BASE + len(ROLES)

    def role_id(self, role: str) -> int:
        try:
            return self.ROLE_BASE + ROLES.index(role)
        except ValueError:
            raise DatasetError(f"unknown role {role!r}")

    def encode_message(self, role: str, content: str) -> tuple[list[int], list[int]]:
        """(boundary prefix ids, content ids incl. end-of-message)."""
        return [self.role_id(role)], list(content.encode("utf-8")) + [self.END]


@dataclass
class SupervisedExample:
    input_ids: list[int]
    labels: list[int]  # IGNORE_INDEX on masked positions

    @property
    def trained_tokens(self) -> int:
        return sum(1 for label in self.labels if label != IGNORE_INDEX)


@dataclass
class SupervisedDataset:
    examples: list[SupervisedExample]
    all_masked_count: int   # records contributing zero loss
    truncated_count: int    # records whose supervised tokens were cut by max_len
    template: ByteChatTemplate = field(default_factory=ByteChatTemplate)


def read_records(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: malformed JSON: {exc.msg}")
    return records


def build_supervised_examples(dataset_path: str | Path,
                              template: ByteChatTemplate | None = None) -> SupervisedDataset:
    """Tokenize every record and attach the label mask."""
    template = template or ByteChatTemplate()
    examples = []
    all_masked = 0
    truncated = 0
    for index, record in enumerate(read_records(dataset_path)):
        messages = record.get("messages")
        if not messages:
            raise DatasetError(f"record {index}: no messages")
        input_ids: list[int] = []
        labels: list[int] = []
        for message in messages:
            trained = bool(message.get("train"))
            if trained and message.get("role") != "assistant":
                raise DatasetError(
                    f"record {index}: train=true on non-assistant role {message.get('role')!r}"
                )
            prefix, content = template.encode_message(message["role"], message["content"])
            input_ids.extend(prefix + content)
            labels.extend([IGNORE_INDEX] * len(prefix))
            labels.extend(content if trained else [IGNORE_INDEX] * len(content))
        full_supervised = sum(1 for label in labels if label != IGNORE_INDEX)
        input_ids = input_ids[: template.max_len]
        labels = labels[: template.max_len]
        example = SupervisedExample(input_ids, labels)
        if example.trained_tokens < full_supervised:
            truncated += 1
        if example.trained_tokens == 0:
            all_masked += 1
        examples.append(example)
    return SupervisedDataset(examples, all_masked, truncated, template)
