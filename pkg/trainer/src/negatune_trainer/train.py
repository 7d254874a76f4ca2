"""Supervised fine-tuning over loss-masked chat datasets.

The built-in "tiny-bytes" model gives a CPU-sized reference path with
the same loss semantics as a real run; any other model id goes through
the transformers stack with the model's own chat template.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import random
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch.nn import functional as F

from .data import IGNORE_INDEX, ByteChatTemplate, build_supervised_examples
from .model import TinyCausalLM
from .schedule import lr_at

TINY_MODEL_ID = "tiny-bytes"


@dataclass
class TrainSpec:
    dataset_path: str
    base_model_id: str = TINY_MODEL_ID
    epochs: int = 2
    batch_size: int = 64          # realized as micro_batch_size x accumulation
    scheduler: str = "cosine"
    warmup_fraction: float = 0.03
    peak_lr: float = 5e-5
    seed: int = 0
    micro_batch_size: int = 8
    out_dir: str = "trainer_out"
    max_len: int = 2048  # byte-level tokens; must cover prompt + trajectory
    n_layers: int = 4
    d_model: int = 64


@dataclass
class TrainResult:
    checkpoint_path: Path
    loss_csv_path: Path
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def collate(examples, pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(e.input_ids) for e in examples)
    inputs = torch.full((len(examples), width), pad_id, dtype=torch.long)
    labels = torch.full((len(examples), width), IGNORE_INDEX, dtype=torch.long)
    for row, example in enumerate(examples):
        inputs[row, : len(example.input_ids)] = torch.tensor(example.input_ids)
        labels[row, : len(example.labels)] = torch.tensor(example.labels)
    return inputs, labels


def shifted_loss_sum(logits: torch.Tensor, labels: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Summed next-token cross entropy over unmasked positions."""
    shifted_logits = logits[:, :-1].reshape(-1, logits.size(-1))
    shifted_labels = labels[:, 1:].reshape(-1)
    loss = F.cross_entropy(shifted_logits, shifted_labels,
                           ignore_index=IGNORE_INDEX, reduction="sum")
    return loss, int((shifted_labels != IGNORE_INDEX).sum())


def _prepare(spec: TrainSpec):
    """(examples, all_masked_count, truncated_count, pad_id, model, forward, extra_meta)."""
    if spec.base_model_id == TINY_MODEL_ID:
        template = ByteChatTemplate(max_len=spec.max_len)
        dataset = build_supervised_examples(spec.dataset_path, template)
        model = TinyCausalLM(template.vocab_size, d_model=spec.d_model,
                             n_layers=spec.n_layers, max_len=spec.max_len)
        return (dataset.examples, dataset.all_masked_count, dataset.truncated_count,
                template.PAD, model, model, {"vocab_size": template.vocab_size})
    from .hf import build_hf_examples, load_model_and_tokenizer
    model, tokenizer = load_model_and_tokenizer(spec.base_model_id)
    examples = build_hf_examples(spec.dataset_path, tokenizer, max_len=spec.max_len)
    all_masked = sum(1 for e in examples if e.trained_tokens == 0)
    forward = lambda inputs: model(inputs).logits
    return examples, all_masked, 0, tokenizer.pad_token_id, model, forward, {}


def train(spec: TrainSpec) -> TrainResult:
    """Run the schedule and write checkpoint, loss curve, and serving hint."""
    if spec.epochs < 1:
        raise ValueError("nothing to train: epochs must be >= 1")
    if spec.batch_size < 1 or spec.micro_batch_size < 1:
        raise ValueError("batch sizes must be >= 1")

    torch.manual_seed(spec.seed)
    examples, all_masked_count, truncated_count, pad_id, model, forward, meta = _prepare(spec)
    if not examples:
        raise ValueError("nothing to train: dataset is empty")
    if truncated_count:
        print(f"warning: max_len={spec.max_len} cut supervised tokens from "
              f"{truncated_count} record(s); raise --max-len", file=sys.stderr)
    if all_masked_count:
        print(f"warning: {all_masked_count} record(s) are fully masked "
              "and contribute zero loss", file=sys.stderr)

    optimizer = torch.optim.AdamW(model.parameters(), lr=spec.peak_lr)
    n = len(examples)
    steps_per_epoch = math.ceil(n / spec.batch_size)
    total_steps = spec.epochs * steps_per_epoch
    order_rng = random.Random(spec.seed)

    result = TrainResult(Path(spec.out_dir) / "checkpoint.pt",
                         Path(spec.out_dir) / "loss_curve.csv")
    step = 0
    model.train()
    for _ in range(spec.epochs):
        order = list(range(n))
        order_rng.shuffle(order)
        for start in range(0, n, spec.batch_size):
            macro = [examples[i] for i in order[start: start + spec.batch_size]]
            step += 1
            lr = lr_at(step, total_steps, spec.peak_lr, spec.warmup_fraction)
            for group in optimizer.param_groups:
                group["lr"] = lr

            # token total first so gradient accumulation reproduces the
            # full-batch mean exactly
            micros = [macro[i: i + spec.micro_batch_size]
                      for i in range(0, len(macro), spec.micro_batch_size)]
            total_tokens = 0
            for micro in micros:
                labels = collate(micro, pad_id)[1]
                total_tokens += int((labels[:, 1:] != IGNORE_INDEX).sum())

            optimizer.zero_grad()
            step_loss = 0.0
            if total_tokens > 0:
                for micro in micros:
                    inputs, labels = collate(micro, pad_id)
                    loss_sum, _ = shifted_loss_sum(forward(inputs), labels)
                    scaled = loss_sum / total_tokens
                    scaled.backward()
                    step_loss += float(scaled.detach())
                optimizer.step()
            result.losses.append(step_loss)
            result.lrs.append(lr)

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save({"model_state": model.state_dict(), "spec": asdict(spec), **meta},
               result.checkpoint_path)
    with open(result.loss_csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step", "lr", "loss"])
        for i, (lr, loss) in enumerate(zip(result.lrs, result.losses), start=1):
            writer.writerow([i, lr, loss])
    (out_dir / "serve_hint.json").write_text(json.dumps({
        "schema": "chat-completions",
        "checkpoint": str(result.checkpoint_path),
        "hint": ("expose this checkpoint behind any chat-completions-compatible "
                 "server and point the evaluation harness at its URL via "
                 "backend.endpoint_url"),
    }, indent=2) + "\n", encoding="utf-8")
    return result


def main() -> None:
    parser = argparse.ArgumentParser(description="Fine-tune on a loss-masked chat dataset")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--model", default=TINY_MODEL_ID)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--micro-batch-size", type=int, default=8)
    parser.add_argument("--warmup-fraction", type=float, default=0.03)
    parser.add_argument("--peak-lr", type=float, default=5e-5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-len", type=int, default=2048)
    parser.add_argument("--out-dir", default="trainer_out")
    args = parser.parse_args()
    spec = TrainSpec(
        dataset_path=args.dataset, base_model_id=args.model, epochs=args.epochs,
        batch_size=args.batch_size, micro_batch_size=args.micro_batch_size,
        warmup_fraction=args.warmup_fraction, peak_lr=args.peak_lr,
        seed=args.seed, max_len=args.max_len, out_dir=args.out_dir,
    )
    result = train(spec)
    print(f"steps: {len(result.losses)}  first loss: {result.initial_loss:.4f}  "
          f"last loss: {result.final_loss:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss curve: {result.loss_csv_path}")


if __name__ == "__main__":
    main()
