"""Bidirectional-LSTM encoder (ROSD family): linear pre-net, BiLSTM, linear post-net."""

from __future__ import annotations

import torch
import torch.nn as nn

from .layers import LinearPreNet


class RecurrentOSD(nn.Module):
    def __init__(self, config) -> None:
        super().__init__()
        if config.hidden_dim is None:
            raise ValueError("ROSD requires hidden_dim")
        self.prenet = LinearPreNet(config.input_bins, config.model_dim)
        self.lstm = nn.LSTM(
            input_size=config.model_dim,
            hidden_size=config.hidden_dim,
            num_layers=config.block_count,
            batch_first=True,
            bidirectional=True,
            dropout=config.dropout if config.block_count > 1 else 0.0,
        )
        self.postnet = nn.Linear(2 * config.hidden_dim, config.class_count)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.prenet(x)  # (B, T, D)
        out, _ = self.lstm(h)
        return out  # (B, T, 2*hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.postnet(self.encode(x)).transpose(1, 2)
