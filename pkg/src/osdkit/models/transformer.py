"""Self-attention encoder (TF family): 1x1-conv pre-net, sinusoidal positions,
post-norm attention blocks, linear post-net."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import ConvPreNet, absolute_positions

MAX_FRAMES = 512


class TransformerBlock(nn.Module):
    """Post-norm block: self-attention then a ReLU feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float) -> None:
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ffn_dim, dim),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attn_out, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + self.drop(attn_out))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x


class TransformerOSD(nn.Module):
    def __init__(self, config) -> None:
        super().__init__()
        dim = config.model_dim
        self.prenet = ConvPreNet(config.input_bins, dim)
        self.register_buffer(
            "positions",
            absolute_positions(MAX_FRAMES, dim).to(torch.float32),
            persistent=False,
        )
        self.input_drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, config.head_count, config.ffn_width, config.dropout)
            for _ in range(config.block_count)
        )
        self.postnet = nn.Linear(dim, config.class_count)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, F, T) -> (B, T, D)
        h = self.prenet(x).transpose(1, 2)
        h = h + self.positions[: h.shape[1]].to(h.dtype)
        h = self.input_drop(h)
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, F, T) -> (B, C, T)
        return self.postnet(self.encode(x)).transpose(1, 2)
