import json

import pytest
import torch

from negatune_trainer.data import (IGNORE_INDEX, ByteChatTemplate, DatasetError,
                                   build_supervised_examples)
from negatune_trainer.model import TinyCausalLM
from negatune_trainer.train import collate, shifted_loss_sum
from conftest import FIXTURE8


def _write(tmp_path, records):
    path = tmp_path / "ds.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return path


def test_mask_fft_covers_exactly_third_message(tmp_path):
    record = {"messages": [
        {"role": "system", "content": "sys", "train": False},
        {"role": "user", "content": "query", "train": False},
        {"role": "assistant", "content": "reply", "train": True},
    ]}
    dataset = build_supervised_examples(_write(tmp_path, [record]))
    example = dataset.examples[0]
    template = dataset.template
    supervised = [label for label in example.labels if label != IGNORE_INDEX]
    assert supervised == list(b"reply") + [template.END]
    # the assistant role marker itself stays masked
    marker_position = example.input_ids.index(template.role_id("assistant"))
    assert example.labels[marker_position] == IGNORE_INDEX


def test_train_true_on_non_assistant_rejected_with_index(tmp_path):
    good = {"messages": [
        {"role": "system", "content": "s", "train": False},
        {"role": "user", "content": "u", "train": False},
        {"role": "assistant", "content": "a", "train": True}]}
    bad = {"messages": [
        {"role": "system", "content": "s", "train": False},
        {"role": "user", "content": "u", "train": True},
        {"role": "assistant", "content": "a", "train": True}]}
    with pytest.raises(DatasetError, match="record 1"):
        build_supervised_examples(_write(tmp_path, [good, bad]))


def test_all_masked_record_flagged(tmp_path):
    record = {"messages": [
        {"role": "system", "content": "s", "train": False},
        {"role": "user", "content": "u", "train": False},
        {"role": "assistant", "content": "a", "train": False}]}
    dataset = build_supervised_examples(_write(tmp_path, [record]))
    assert dataset.all_masked_count == 1
    assert dataset.examples[0].trained_tokens == 0


def test_fixture8_masked_count_matches_raw_recount():
    dataset = build_supervised_examples(FIXTURE8)
    assert len(dataset.examples) == 8
    raw_lines = FIXTURE8.read_text(encoding="utf-8").splitlines()
    for example, line in zip(dataset.examples, raw_lines):
        record = json.loads(line)
        # independent recount: UTF-8 bytes of trained content + 1 end marker each
        expected = sum(
            len(m["content"].encode("utf-8")) + 1
            for m in record["messages"] if m["train"]
        )
        assert example.trained_tokens == expected


def test_changing_masked_content_keeps_label_sequence(tmp_path):
    base = {"messages": [
        {"role": "system", "content": "original system prompt", "train": False},
        {"role": "user", "content": "the question", "train": False},
        {"role": "assistant", "content": "the answer", "train": True}]}
    edited = json.loads(json.dumps(base))
    edited["messages"][0]["content"] = "a completely different and much longer system prompt"

    labels_a = build_supervised_examples(_write(tmp_path, [base])).examples[0].labels
    labels_b = build_supervised_examples(_write(tmp_path, [edited])).examples[0].labels
    supervised_a = [l for l in labels_a if l != IGNORE_INDEX]
    supervised_b = [l for l in labels_b if l != IGNORE_INDEX]
    assert supervised_a == supervised_b


def test_batch_loss_equals_manual_unmasked_oracle():
    dataset = build_supervised_examples(FIXTURE8)
    torch.manual_seed(0)
    model = TinyCausalLM(dataset.template.vocab_size)
    model.eval()
    inputs, labels = collate(dataset.examples, dataset.template.PAD)
    with torch.no_grad():
        logits = model(inputs)
        loss_sum, n_tokens = shifted_loss_sum(logits, labels)

        flat_logits = logits[:, :-1].reshape(-1, logits.size(-1))
        flat_labels = labels[:, 1:].reshape(-1)
        per_position = torch.nn.functional.cross_entropy(
            flat_logits, flat_labels.clamp(min=0), reduction="none")
        manual = (per_position * (flat_labels != IGNORE_INDEX)).sum()

    assert n_tokens == sum(e.trained_tokens for e in dataset.examples)
    assert abs(float(loss_sum) - float(manual)) <= 1e-6


def test_truncation_that_cuts_supervised_tokens_is_flagged(tmp_path):
    record = {"messages": [
        {"role": "system", "content": "x" * 600, "train": False},  # realistic prompt length
        {"role": "user", "content": "question", "train": False},
        {"role": "assistant", "content": "answer", "train": True}]}
    tight = build_supervised_examples(_write(tmp_path, [record]), ByteChatTemplate(max_len=512))
    assert tight.truncated_count == 1
    assert tight.all_masked_count == 1

    roomy = build_supervised_examples(_write(tmp_path, [record]), ByteChatTemplate(max_len=2048))
    assert roomy.truncated_count == 0
    assert roomy.examples[0].trained_tokens == len(b"answer") + 1


def test_default_window_fits_realistic_prompts(tmp_path):
    record = {"messages": [
        {"role": "system", "content": "s" * 700, "train": False},
        {"role": "user", "content": "q" * 300, "train": False},
        {"role": "assistant", "content": "Action: finish[42]", "train": True}]}
    dataset = build_supervised_examples(_write(tmp_path, [record]))
    assert dataset.truncated_count == 0
    assert dataset.examples[0].trained_tokens > 0


def test_unicode_content_counts_bytes():
    template = ByteChatTemplate()
    _, content = template.encode_message("assistant", "Résultat : 42")
    assert len(content) == len("Résultat : 42".encode("utf-8")) + 1
    assert all(0 <= t < template.vocab_size for t in content)
