"""Encoder zoo: four families behind one 64xT -> 3xT contract."""

from .checkpoint import load_checkpoint, save_checkpoint
from .zoo import (
    DEFAULT_BLOCK_COUNTS,
    FAMILIES,
    EmbeddingMatrix,
    ModelConfig,
    PredictionMatrix,
    build_model,
    default_config,
    encode,
    forward,
    param_count,
)

__all__ = [
    "DEFAULT_BLOCK_COUNTS",
    "FAMILIES",
    "EmbeddingMatrix",
    "ModelConfig",
    "PredictionMatrix",
    "build_model",
    "default_config",
    "encode",
    "forward",
    "param_count",
    "load_checkpoint",
    "save_checkpoint",
]
