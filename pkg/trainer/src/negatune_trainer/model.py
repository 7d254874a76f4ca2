"""Tiny causal transformer used for the CI-scale reference path."""
from __future__ import annotations

import torch
from torch import nn


class TinyCausalLM(nn.Module):
    def __init__(self, vocab_size: int, d_model: int = 64, n_layers: int = 4,
                 n_heads: int = 4, max_len: int = 1024):
        super().__init__()
        self.max_len = max_len
        self.token_embedding = nn.Embedding(vocab_size, d_model)
        self.position_embedding = nn.Embedding(max_len, d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=d_model, nhead=n_heads, dim_feedforward=4 * d_model,
            batch_first=True, norm_first=True, dropout=0.0,
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=n_layers,
                                            enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab_size, bias=False)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        batch, length = input_ids.shape
        if length > self.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.max_len}")
        positions = torch.arange(length, device=input_ids.device)
        hidden = self.token_embedding(input_ids) + self.position_embedding(positions)
        causal = torch.triu(
            torch.full((length, length), float("-inf"), device=input_ids.device), diagonal=1)
        hidden = self.blocks(hidden, mask=causal)
        return self.head(self.norm(hidden))


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
