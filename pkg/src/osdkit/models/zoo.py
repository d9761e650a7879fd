"""Model construction behind one contract: 64 x T features in, 3 x T scores out.

Four encoder families share the Pre-Net -> Encoder -> Post-Net layout:

    TF    self-attention encoder, 12 blocks, 8 heads
    TCN   dilated temporal convolutions, 3 blocks of 8 res-blocks
    CF    convolution-augmented attention, 6 blocks
    ROSD  bidirectional LSTM

The default widths below are tuned so each family's trainable parameter
count lands within a percent of its published budget (TF 3.98M, TCN 3.87M,
CF 4.01M, ROSD 4.07M); exact counts are frozen in the test suite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn as nn

from ..errors import ConfigError
from ..features import FeatureMatrix

FAMILIES = ("TF", "TCN", "CF", "ROSD")

_ATTENTION_FAMILIES = ("TF", "CF")

# Block counts pinned for the tuned default of each family.
DEFAULT_BLOCK_COUNTS = {"TF": 12, "TCN": 3, "CF": 6, "ROSD": 2}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture family plus everything needed to rebuild the network.

    model_dim is the encoder width (channel count for TCN). ffn_dim defaults
    to 4 * model_dim when unset. For ROSD, block_count is the LSTM layer
    count and hidden_dim the per-direction LSTM width. Custom block counts
    and widths are allowed so toy-sized models can be built for testing; the
    tuned defaults come from ``default_config``.
    """

    family: str
    model_dim: int
    block_count: int
    head_count: int = 8
    ffn_dim: int | None = None
    conv_kernel: int = 15
    tcn_resblocks_per_block: int = 8
    hidden_dim: int | None = None
    dropout: float = 0.1
    class_count: int = 3
    input_bins: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; pick one of {FAMILIES}")
        if self.model_dim < 1 or self.block_count < 1:
            raise ConfigError("model_dim and block_count must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.class_count != 3:
            raise ConfigError("class_count is pinned to 3")
        if self.family in _ATTENTION_FAMILIES:
            if self.head_count < 1 or self.model_dim % self.head_count != 0:
                raise ConfigError(
                    f"model_dim={self.model_dim} must be divisible by "
                    f"head_count={self.head_count}"
                )
        if self.family == "CF" and (self.conv_kernel < 1 or self.conv_kernel % 2 == 0):
            raise ConfigError("conv_kernel must be a positive odd number")
        if self.family == "TCN" and self.tcn_resblocks_per_block < 1:
            raise ConfigError("tcn_resblocks_per_block must be positive")
        if self.family == "ROSD" and (self.hidden_dim is None or self.hidden_dim < 1):
            raise ConfigError("ROSD requires a positive hidden_dim")

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.model_dim

    def meta_lines(self) -> list[str]:
        return [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]

    def digest(self) -> str:
        h = hashlib.sha256("\n".join(self.meta_lines()).encode("ascii"))
        return h.hexdigest()[:12]


_DEFAULTS = {
    "TF": dict(model_dim=160, block_count=12, head_count=8, ffn_dim=704),
    "TCN": dict(model_dim=200, block_count=3, tcn_resblocks_per_block=8),
    "CF": dict(model_dim=160, block_count=6, head_count=8, ffn_dim=704, conv_kernel=15),
    "ROSD": dict(model_dim=160, block_count=2, hidden_dim=336),
}


def default_config(family: str, *, dropout: float = 0.1, seed: int = 0) -> ModelConfig:
    """The tuned preset for a family, sized to its parameter budget."""
    if family not in _DEFAULTS:
        raise ConfigError(f"unknown model family {family!r}; pick one of {FAMILIES}")
    return ModelConfig(family=family, dropout=dropout, seed=seed, **_DEFAULTS[family])


def build_model(config: ModelConfig) -> nn.Module:
    """Instantiate a family model with parameters seeded from config.seed.

    The global torch RNG is forked around initialization, so building a
    model neither consumes nor disturbs the caller's random state. The model
    is returned in evaluation mode.
    """
    from .conformer import ConformerOSD
    from .recurrent import RecurrentOSD
    from .tcn import TCNOSD
    from .transformer import TransformerOSD

    builders = {
        "TF": TransformerOSD,
        "TCN": TCNOSD,
        "CF": ConformerOSD,
        "ROSD": RecurrentOSD,
    }
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = builders[config.family](config)
    model.osd_config = config
    return model.eval()


def param_count(model: nn.Module) -> int:
    """Exact number of trainable scalar parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


@dataclass
class EmbeddingMatrix:
    """Encoder output for one segment, shape (encoder_width, frame_count)."""

    values: np.ndarray
    segment_id: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or not np.isfinite(self.values).all():
            raise ValueError("EmbeddingMatrix must be a finite 2-D array")


@dataclass
class PredictionMatrix:
    """Pre-softmax class scores for one segment, shape (class_count, frame_count)."""

    logits: np.ndarray
    segment_id: str = ""

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float32)
        if self.logits.ndim != 2 or not np.isfinite(self.logits).all():
            raise ValueError("PredictionMatrix must be a finite 2-D array")

    @property
    def class_count(self) -> int:
        return self.logits.shape[0]

    @property
    def frame_count(self) -> int:
        return self.logits.shape[1]


def _as_input(features: FeatureMatrix, model: nn.Module) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    return torch.from_numpy(np.ascontiguousarray(features.values)).to(dtype).unsqueeze(0)


def forward(model: nn.Module, features: FeatureMatrix) -> PredictionMatrix:
    """Evaluation-mode forward pass for one segment."""
    model.eval()
    with torch.no_grad():
        logits = model(_as_input(features, model))[0]
    return PredictionMatrix(
        logits=logits.to(torch.float32).numpy(), segment_id=features.segment_id
    )


def encode(model: nn.Module, features: FeatureMatrix) -> EmbeddingMatrix:
    """Evaluation-mode encoder output for one segment, (width, frames)."""
    model.eval()
    with torch.no_grad():
        emb = model.encode(_as_input(features, model))[0]
    return EmbeddingMatrix(
        values=emb.to(torch.float32).numpy().T, segment_id=features.segment_id
    )
