"""Layers shared across encoder families: positional tables and pre/post nets."""

from __future__ import annotations

import math

import torch
import torch.nn as nn


def sinusoid_table(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Sine/cosine table for arbitrary (possibly negative) positions.

    Built in float64 for run-to-run stability, returned as float64; callers
    cast to the working dtype.
    """
    pos = positions.to(torch.float64).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=torch.float64)
    inv_freq = torch.exp(-math.log(10000.0) * idx / dim)
    table = torch.zeros(len(positions), dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * inv_freq)
    table[:, 1::2] = torch.cos(pos * inv_freq)[:, : dim // 2]
    return table


def absolute_positions(length: int, dim: int) -> torch.Tensor:
    return sinusoid_table(torch.arange(length), dim)


def relative_positions(length: int, dim: int) -> torch.Tensor:
    """Rows cover relative distances -(T-1) .. T-1; row r is distance r - (T-1)."""
    return sinusoid_table(torch.arange(-(length - 1), length), dim)


class ConvPreNet(nn.Module):
    """1x1 convolution lifting mel bins to the encoder width. (B, F, T) -> (B, D, T)."""

    def __init__(self, in_bins: int, model_dim: int) -> None:
        super().__init__()
        self.proj = nn.Conv1d(in_bins, model_dim, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x)


class LinearPreNet(nn.Module):
    """Per-frame linear map from mel bins to the encoder width. (B, F, T) -> (B, T, D)."""

    def __init__(self, in_bins: int, model_dim: int) -> None:
        super().__init__()
        self.proj = nn.Linear(in_bins, model_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x.transpose(1, 2))
