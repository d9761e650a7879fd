"""Shared helpers: toy model configs and synthetic in-memory datasets."""

import numpy as np

from osdkit.data import SegmentDataset
from osdkit.features import AudioClip, FeatureConfig, fbank
from osdkit.models import ModelConfig

TOY_CONFIGS = {
    "TF": dict(model_dim=16, block_count=1, head_count=4, ffn_dim=32),
    "TCN": dict(model_dim=16, block_count=1, tcn_resblocks_per_block=2),
    "CF": dict(model_dim=8, block_count=1, head_count=2, ffn_dim=16, conv_kernel=7),
    "ROSD": dict(model_dim=16, block_count=1, hidden_dim=8),
}


def toy_config(family: str, dropout: float = 0.0, seed: int = 0) -> ModelConfig:
    return ModelConfig(family=family, dropout=dropout, seed=seed, **TOY_CONFIGS[family])


def micro_dataset(n_segments: int = 2, frames: int = 8, seed: int = 0) -> SegmentDataset:
    """Random features/targets; enough to drive the training loop machinery."""
    rng = np.random.default_rng(seed)
    return SegmentDataset(
        ids=[f"seg{i:03d}" for i in range(n_segments)],
        features=rng.normal(0.0, 1.0, (n_segments, 64, frames)).astype(np.float32),
        targets=rng.integers(0, 3, (n_segments, frames)).astype(np.int64),
        masks=np.ones((n_segments, frames), dtype=bool),
    )


STATE_TONES = {1: (500.0,), 2: (500.0, 1250.0)}


def tone_segment_dataset(
    n_segments: int = 8,
    seed: int = 0,
    frames: int = 400,
    min_run: int = 30,
    max_run: int = 80,
) -> SegmentDataset:
    """Separable synthetic segments: silence, one tone, or two tones per run.

    Labels follow the planted runs exactly, so the mapping from features to
    classes is deterministic and memorizable.
    """
    rng = np.random.default_rng(seed)
    config = FeatureConfig()
    hop = config.hop_samples
    feats, targets = [], []
    for _ in range(n_segments):
        labels = np.zeros(frames, dtype=np.int64)
        x = rng.normal(0.0, 1e-3, frames * hop)
        t = 0
        while t < frames:
            state = int(rng.integers(0, 3))
            length = min(int(rng.integers(min_run, max_run)), frames - t)
            labels[t : t + length] = state
            for f0 in STATE_TONES.get(state, ()):
                n = np.arange(t * hop, (t + length) * hop)
                x[t * hop : (t + length) * hop] += 0.4 * np.sin(
                    2 * np.pi * f0 * n / config.sample_rate
                )
            t += length
        feats.append(fbank(AudioClip(x), config).values)
        targets.append(labels)
    n = len(feats)
    return SegmentDataset(
        ids=[f"tone{i:03d}" for i in range(n)],
        features=np.stack(feats),
        targets=np.stack(targets),
        masks=np.ones((n, frames), dtype=bool),
    )
