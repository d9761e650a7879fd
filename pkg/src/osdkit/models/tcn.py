"""Dilated temporal-convolution encoder (TCN family).

Each of the block_count blocks stacks res-blocks whose dilation doubles
(1, 2, 4, ...), giving a receptive field of several seconds at a 10 ms hop.
Convolutions are centered (non-causal): detection is an offline task.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import ConvPreNet

TCN_KERNEL = 3


class TCNResBlock(nn.Module):
    """Dilated conv -> norm -> ReLU -> 1x1 conv -> norm -> ReLU, with residual."""

    def __init__(self, channels: int, dilation: int, dropout: float) -> None:
        super().__init__()
        pad = dilation * (TCN_KERNEL - 1) // 2
        self.conv_dilated = nn.Conv1d(
            channels, channels, TCN_KERNEL, dilation=dilation, padding=pad
        )
        self.norm1 = nn.GroupNorm(1, channels)
        self.conv_pointwise = nn.Conv1d(channels, channels, 1)
        self.norm2 = nn.GroupNorm(1, channels)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.drop(F.relu(self.norm1(self.conv_dilated(x))))
        h = self.drop(F.relu(self.norm2(self.conv_pointwise(h))))
        return x + h


class TCNOSD(nn.Module):
    def __init__(self, config) -> None:
        super().__init__()
        channels = config.model_dim
        self.prenet = ConvPreNet(config.input_bins, channels)
        self.blocks = nn.ModuleList(
            TCNResBlock(channels, dilation=2**r, dropout=config.dropout)
            for _ in range(config.block_count)
            for r in range(config.tcn_resblocks_per_block)
        )
        self.postnet = nn.Conv1d(channels, config.class_count, kernel_size=1)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.prenet(x)  # (B, D, T)
        for block in self.blocks:
            h = block(h)
        return h.transpose(1, 2)  # (B, T, D)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.postnet(self.encode(x).transpose(1, 2))
