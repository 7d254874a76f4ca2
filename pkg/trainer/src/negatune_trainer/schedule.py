"""Cosine learning-rate schedule with fractional linear warmup."""
from __future__ import annotations

import math


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    return max(1, round(warmup_fraction * total_steps))


def lr_at(step: int, total_steps: int, peak_lr: float, warmup_fraction: float = 0.03) -> float:
    """Learning rate at a 1-based optimizer step.

    Linear warmup to peak_lr over the first warmup_steps, then cosine
    decay to zero at total_steps; lr(warmup_steps) == peak_lr exactly.
    """
    if not 1 <= step <= total_steps:
        raise ValueError(f"step {step} outside [1, {total_steps}]")
    warmup = warmup_steps(total_steps, warmup_fraction)
    if step <= warmup:
        return peak_lr * step / warmup
    progress = (step - warmup) / (total_steps - warmup)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
