"""Convolution-augmented attention encoder (CF family).

Each block applies, in order: a half-weighted feed-forward, relative-position
multi-head self-attention, a depthwise-convolution module, a second
half-weighted feed-forward, and a closing layer norm. All branches are
residual. tests/test_models.py re-derives one block step by step in numpy
against this exact composition.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .layers import ConvPreNet, relative_positions


class FeedForwardModule(nn.Module):
    """Pre-norm feed-forward with SiLU; caller scales the residual by 0.5."""

    def __init__(self, dim: int, ffn_dim: int, dropout: float) -> None:
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.w1 = nn.Linear(dim, ffn_dim)
        self.w2 = nn.Linear(ffn_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.drop(torch.nn.functional.silu(self.w1(self.norm(x))))
        return self.drop(self.w2(h))


class RelPosSelfAttention(nn.Module):
    """Multi-head self-attention with learned projection of relative positions.

    score(i, j) = [(q_i + u) . k_j + (q_i + v) . p_{i-j}] / sqrt(d_head)
    where p_m is a bias-free linear map of the sinusoidal embedding of the
    relative distance m. The (2T-1)-row position term is materialized and
    gathered per (i, j); no skew tricks, so the computation matches a direct
    per-pair evaluation.
    """

    def __init__(self, dim: int, heads: int, dropout: float) -> None:
        super().__init__()
        if dim % heads != 0:
            raise ValueError("model_dim must be divisible by head_count")
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.pos = nn.Linear(dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        self.content_bias = nn.Parameter(torch.empty(heads, self.head_dim))
        self.position_bias = nn.Parameter(torch.empty(heads, self.head_dim))
        nn.init.xavier_uniform_(self.content_bias)
        nn.init.xavier_uniform_(self.position_bias)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, dim = x.shape
        heads, head_dim = self.heads, self.head_dim

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, length, heads, head_dim).transpose(1, 2)

        q = split(self.query(x))  # (B, H, T, Dh)
        k = split(self.key(x))
        v = split(self.value(x))
        rel = relative_positions(length, dim).to(dtype=x.dtype, device=x.device)
        p = self.pos(rel).view(2 * length - 1, heads, head_dim)

        content = torch.matmul(q + self.content_bias.unsqueeze(1), k.transpose(2, 3))
        # position term for every relative distance, then gather m = i - j
        pos_all = torch.einsum("bhid,mhd->bhim", q + self.position_bias.unsqueeze(1), p)
        idx = (
            torch.arange(length, device=x.device).unsqueeze(1)
            - torch.arange(length, device=x.device).unsqueeze(0)
            + length
            - 1
        )
        pos_term = torch.gather(
            pos_all, 3, idx.expand(batch, heads, length, length)
        )
        scores = (content + pos_term) / math.sqrt(head_dim)
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = torch.matmul(attn, v).transpose(1, 2).reshape(batch, length, dim)
        return self.out(out)


class ConvModule(nn.Module):
    """Pointwise-GLU, depthwise conv, batch norm, SiLU, pointwise projection."""

    def __init__(self, dim: int, kernel: int, dropout: float) -> None:
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("depthwise kernel must be odd for same-length output")
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, 2 * dim, kernel_size=1)
        self.glu = nn.GLU(dim=1)
        self.depthwise = nn.Conv1d(
            dim, dim, kernel_size=kernel, padding=kernel // 2, groups=dim
        )
        self.batch_norm = nn.BatchNorm1d(dim)
        self.pointwise_out = nn.Conv1d(dim, dim, kernel_size=1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm(x).transpose(1, 2)  # (B, D, T)
        h = self.glu(self.pointwise_in(h))
        h = self.batch_norm(self.depthwise(h))
        h = torch.nn.functional.silu(h)
        h = self.pointwise_out(h)
        return self.drop(h).transpose(1, 2)


class ConformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int, kernel: int, dropout: float) -> None:
        super().__init__()
        self.ffn1 = FeedForwardModule(dim, ffn_dim, dropout)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = RelPosSelfAttention(dim, heads, dropout)
        self.attn_drop = nn.Dropout(dropout)
        self.conv = ConvModule(dim, kernel, dropout)
        self.ffn2 = FeedForwardModule(dim, ffn_dim, dropout)
        self.final_norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + 0.5 * self.ffn1(x)
        x = x + self.attn_drop(self.attn(self.attn_norm(x)))
        x = x + self.conv(x)
        x = x + 0.5 * self.ffn2(x)
        return self.final_norm(x)


class ConformerOSD(nn.Module):
    def __init__(self, config) -> None:
        super().__init__()
        dim = config.model_dim
        self.prenet = ConvPreNet(config.input_bins, dim)
        self.blocks = nn.ModuleList(
            ConformerBlock(
                dim,
                config.head_count,
                config.ffn_width,
                config.conv_kernel,
                config.dropout,
            )
            for _ in range(config.block_count)
        )
        self.postnet = nn.Linear(dim, config.class_count)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.prenet(x).transpose(1, 2)  # (B, T, D)
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.postnet(self.encode(x)).transpose(1, 2)
