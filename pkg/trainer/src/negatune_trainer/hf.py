"""Hugging Face path: real models, their own chat template and tokenizer.

Masks are carried over by incremental prefix tokenization: the tokens a
message contributes are the diff between the rendered conversation up
to and including it and the one before it. This assumes the template is
prefix-stable, which holds for the published chat templates.
"""
from __future__ import annotations

from pathlib import Path

from .data import IGNORE_INDEX, DatasetError, SupervisedExample, read_records


def load_model_and_tokenizer(model_id: str):
    try:
        from transformers import AutoModelForCausalLM, AutoTokenizer
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModelForCausalLM.from_pretrained(model_id)
    except Exception as exc:
        raise RuntimeError(
            f"could not load model {model_id!r}: {exc}. Use 'tiny-bytes' for the "
            "CPU reference path, or check the model id, disk space, and memory "
            "(a smaller model or a GPU machine may be needed)."
        )
    if tokenizer.pad_token_id is None:
        tokenizer.pad_token = tokenizer.eos_token
    return model, tokenizer


def build_hf_examples(dataset_path: str | Path, tokenizer,
                      max_len: int = 2048) -> list[SupervisedExample]:
    examples = []
    for index, record in enumerate(read_records(dataset_path)):
        messages = record.get("messages")
        if not messages:
            raise DatasetError(f"record {index}: no messages")
        conversation = []
        input_ids: list[int] = []
        labels: list[int] = []
        previous_len = 0
        for message in messages:
            trained = bool(message.get("train"))
            if trained and message.get("role") != "assistant":
                raise DatasetError(
                    f"record {index}: train=true on non-assistant role {message.get('role')!r}"
                )
            conversation.append({"role": message["role"], "content": message["content"]})
            rendered = tokenizer.apply_chat_template(conversation, tokenize=True)
            new_tokens = rendered[previous_len:]
            previous_len = len(rendered)
            input_ids.extend(new_tokens)
            labels.extend(new_tokens if trained else [IGNORE_INDEX] * len(new_tokens))
        examples.append(SupervisedExample(input_ids[:max_len], labels[:max_len]))
    return examples
