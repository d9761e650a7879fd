"""Bridges the on-disk feature/label caches to batched torch tensors."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .annotations import ManifestRecord, load_labels
from .errors import ConfigError, DataError
from .features import (
    AudioClip,
    FeatureConfig,
    fbank,
    load_audio,
    load_feature_matrix,
    read_feature_digest,
)

FEATURES_SUBDIR = "features"
LABELS_SUBDIR = "labels"


@dataclass
class SegmentDataset:
    """An in-memory set of equal-length segments ready for batching.

    ``clips`` is populated only when the dataset was loaded with raw audio,
    which is what allows waveform augmentation during training (features are
    then recomputed per step instead of served from the cache).
    """

    ids: list[str]
    features: np.ndarray  # (N, mel_bins, T) float32
    targets: np.ndarray  # (N, T) int64
    masks: np.ndarray  # (N, T) bool
    clips: list[AudioClip] | None = None
    feature_config: FeatureConfig | None = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def frame_length(self) -> int:
        return self.targets.shape[1]

    def class_frame_counts(self) -> np.ndarray:
        return np.bincount(self.targets[self.masks].ravel(), minlength=3)[:3]

    @classmethod
    def from_cache(
        cls,
        records: Sequence[ManifestRecord],
        cache_dir,
        *,
        expected_digest: str | None = None,
        with_audio: bool = False,
        feature_config: FeatureConfig | None = None,
    ) -> "SegmentDataset":
        if not records:
            raise DataError("no manifest records to load")
        cache_dir = Path(cache_dir)
        stored = read_feature_digest(cache_dir / FEATURES_SUBDIR)
        if expected_digest is not None and stored != expected_digest:
            raise ConfigError(
                f"feature cache at {cache_dir} was built with config digest "
                f"{stored!r}, expected {expected_digest!r}"
            )
        feats, targets, masks, ids = [], [], [], []
        for r in records:
            fm = load_feature_matrix(cache_dir / FEATURES_SUBDIR, r.segment_id)
            fl = load_labels(cache_dir / LABELS_SUBDIR, r.segment_id, expected_digest)
            if fl.frame_count != fm.frame_count or fl.valid_frames != fm.valid_frames:
                raise DataError(
                    f"segment {r.segment_id}: features and labels disagree on framing"
                )
            feats.append(fm.values)
            targets.append(fl.labels.astype(np.int64))
            mask = np.zeros(fm.frame_count, dtype=bool)
            mask[: fm.valid_frames] = True
            masks.append(mask)
            ids.append(r.segment_id)
        clips = None
        if with_audio:
            clips = _load_clips(records)
        return cls(
            ids=ids,
            features=np.stack(feats),
            targets=np.stack(targets),
            masks=np.stack(masks),
            clips=clips,
            feature_config=feature_config,
        )

    def batch_tensors(
        self,
        indices: Sequence[int],
        *,
        augmenter=None,
        rng: np.random.Generator | None = None,
        dtype: torch.dtype = torch.float32,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Assemble one batch; with an augmenter, features are recomputed
        from (augmented) waveforms instead of the cached matrices."""
        idx = np.asarray(indices, dtype=np.int64)
        if augmenter is not None:
            if self.clips is None or self.feature_config is None:
                raise DataError(
                    "augmentation needs a dataset loaded with with_audio=True"
                )
            if rng is None:
                raise ValueError("augmentation needs an explicit rng")
            clips = [self.clips[i] for i in idx]
            augmented, _ = augmenter.augment_batch(clips, rng)
            T = self.frame_length
            feats = np.stack(
                [fbank(c, self.feature_config, pad_to=T).values for c in augmented]
            )
        else:
            feats = self.features[idx]
        return (
            torch.from_numpy(np.ascontiguousarray(feats)).to(dtype),
            torch.from_numpy(self.targets[idx]),
            torch.from_numpy(self.masks[idx]),
        )


def _load_clips(records: Sequence[ManifestRecord]) -> list[AudioClip]:
    cache: dict[str, AudioClip] = {}
    clips = []
    for r in records:
        full = cache.get(r.audio_path)
        if full is None:
            full = load_audio(r.audio_path)
            cache[r.audio_path] = full
        if r.end_sample > len(full):
            raise DataError(
                f"segment {r.segment_id}: span [{r.start_sample}, {r.end_sample}) "
                f"exceeds audio of {len(full)} samples"
            )
        clips.append(
            AudioClip(
                full.samples[r.start_sample : r.end_sample],
                source_id=r.segment_id,
            )
        )
    return clips


def group_records_by_tag(
    records: Sequence[ManifestRecord],
) -> dict[str, list[ManifestRecord]]:
    grouped: dict[str, list[ManifestRecord]] = {}
    for r in records:
        grouped.setdefault(r.dataset_tag, []).append(r)
    return grouped
