"""Frame-level scoring: per-class confusion counts, overlap F1, eval reports.

The headline metric is F1 on the OVERLAP class over valid frames scored per
dataset tag; the summary number is the unweighted arithmetic mean of the
per-dataset F1 values. Predicted labels are the per-frame argmax of the
three class scores, with ties broken toward the lower class index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .annotations import OVERLAP
from .data import SegmentDataset
from .errors import DataError

_CLASS_NAMES = ("silence", "single", "overlap")


@dataclass
class ConfusionCounts:
    """Per-class TP/FP/FN over valid frames, plus the frame total."""

    tp: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    total_frames: int = 0

    @classmethod
    def from_labels(
        cls, pred: np.ndarray, ref: np.ndarray, mask: np.ndarray | None = None
    ) -> "ConfusionCounts":
        pred = np.asarray(pred).ravel()
        ref = np.asarray(ref).ravel()
        if pred.shape != ref.shape:
            raise ValueError(
                f"prediction/reference length mismatch: {pred.shape} vs {ref.shape}"
            )
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).ravel()
            if mask.shape != ref.shape:
                raise ValueError("mask length mismatch")
            pred, ref = pred[mask], ref[mask]
        counts = cls(total_frames=len(ref))
        for c in range(3):
            counts.tp[c] = int(np.sum((pred == c) & (ref == c)))
            counts.fp[c] = int(np.sum((pred == c) & (ref != c)))
            counts.fn[c] = int(np.sum((pred != c) & (ref == c)))
        return counts

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            total_frames=self.total_frames + other.total_frames,
        )

    def precision(self, c: int) -> float:
        denom = self.tp[c] + self.fp[c]
        return float(self.tp[c] / denom) if denom else 0.0

    def recall(self, c: int) -> float:
        denom = self.tp[c] + self.fn[c]
        return float(self.tp[c] / denom) if denom else 0.0

    def f1(self, c: int) -> float:
        p, r = self.precision(c), self.recall(c)
        return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def collar_mask(ref: np.ndarray, collar: int, target_class: int = OVERLAP) -> np.ndarray:
    """False within ``collar`` frames of a reference target-class boundary.

    With collar=0 every frame is scored.
    """
    ref = np.asarray(ref).ravel()
    keep = np.ones(len(ref), dtype=bool)
    if collar <= 0:
        return keep
    inside = (ref == target_class).astype(np.int8)
    boundaries = np.flatnonzero(np.diff(inside)) + 1
    for b in boundaries:
        keep[max(0, b - collar) : min(len(ref), b + collar)] = False
    return keep


def smooth_labels(pred: np.ndarray, width: int) -> np.ndarray:
    """Median-filter a label sequence; width must be odd, 0/1 means off."""
    if width <= 1:
        return pred
    if width % 2 == 0:
        raise ValueError("median filter width must be odd")
    from scipy.ndimage import median_filter

    return median_filter(pred, size=width, mode="nearest")


def frame_f1(
    pred,
    ref,
    mask=None,
    target_class: int = OVERLAP,
    collar: int = 0,
) -> tuple[float, float, float]:
    """(precision, recall, F1) for one class over aligned label sequences.

    Accepts single arrays or lists of per-segment arrays (with matching
    masks). A nonzero ``collar`` excludes frames that close to a reference
    boundary of the target class. Any 0/0 ratio is defined as 0.
    """
    if isinstance(pred, (list, tuple)):
        pred = np.concatenate([np.asarray(p).ravel() for p in pred])
        ref = np.concatenate([np.asarray(r).ravel() for r in ref])
        if mask is not None:
            mask = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in mask])
    if collar > 0:
        keep = collar_mask(ref, collar, target_class)
        mask = keep if mask is None else (np.asarray(mask, dtype=bool).ravel() & keep)
    counts = ConfusionCounts.from_labels(pred, ref, mask)
    return (
        counts.precision(target_class),
        counts.recall(target_class),
        counts.f1(target_class),
    )


@dataclass
class DatasetScore:
    tag: str
    precision: float
    recall: float
    f1: float
    per_class_precision: tuple[float, float, float]
    per_class_recall: tuple[float, float, float]
    counts: ConfusionCounts


@dataclass
class EvalReport:
    """Per-dataset overlap F1 plus their unweighted mean."""

    scores: dict[str, DatasetScore]
    mean_f1: float
    digests: dict[str, str] = field(default_factory=dict)

    def format_table(self) -> str:
        rows = [f"{'Dataset':<14}{'Prec':>8}{'Recall':>8}{'F1':>8}"]
        for tag in sorted(self.scores):
            s = self.scores[tag]
            rows.append(f"{tag:<14}{s.precision:>8.4f}{s.recall:>8.4f}{s.f1:>8.4f}")
        rows.append(f"{'Mean':<14}{'':>8}{'':>8}{self.mean_f1:>8.4f}")
        return "\n".join(rows)

    def to_records(self) -> list[str]:
        out = [f"# {k}={v}" for k, v in sorted(self.digests.items())]
        for tag in sorted(self.scores):
            s = self.scores[tag]
            per_class = " ".join(
                f"class_{name}_precision={s.per_class_precision[c]!r} "
                f"class_{name}_recall={s.per_class_recall[c]!r}"
                for c, name in enumerate(_CLASS_NAMES)
            )
            out.append(
                f"dataset={tag} overlap_precision={s.precision!r} "
                f"overlap_recall={s.recall!r} overlap_f1={s.f1!r} "
                f"frames={s.counts.total_frames} {per_class}"
            )
        out.append(f"mean_overlap_f1={self.mean_f1!r}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.to_records()) + "\n", encoding="utf-8")


def predict_labels(model, dataset: SegmentDataset, batch_size: int = 32) -> np.ndarray:
    """Evaluation-mode argmax labels for every segment, shape (N, T)."""
    if hasattr(model, "eval"):
        model.eval()
    preds = []
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            idx = range(lo, min(lo + batch_size, len(dataset)))
            feats, _, _ = dataset.batch_tensors(idx)
            logits = model(feats)
            logits = logits.numpy() if isinstance(logits, torch.Tensor) else np.asarray(logits)
            preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds, axis=0)


def evaluate(
    model,
    datasets: Mapping[str, SegmentDataset],
    *,
    batch_size: int = 32,
    digests: dict[str, str] | None = None,
    collar: int = 0,
    median_filter: int = 0,
) -> EvalReport:
    """Score a model on every dataset tag and average the overlap F1.

    ``collar`` and ``median_filter`` default to off; they exclude frames near
    reference overlap boundaries and smooth the argmax track, respectively.
    """
    if not datasets:
        raise DataError("no evaluation datasets")
    scores = {}
    for tag, dataset in datasets.items():
        pred = predict_labels(model, dataset, batch_size)
        if median_filter > 1:
            pred = np.stack([smooth_labels(row, median_filter) for row in pred])
        mask = dataset.masks
        if collar > 0:
            keep = np.stack([collar_mask(row, collar) for row in dataset.targets])
            mask = mask & keep
        counts = ConfusionCounts.from_labels(pred, dataset.targets, mask)
        scores[tag] = DatasetScore(
            tag=tag,
            precision=counts.precision(OVERLAP),
            recall=counts.recall(OVERLAP),
            f1=counts.f1(OVERLAP),
            per_class_precision=tuple(counts.precision(c) for c in range(3)),
            per_class_recall=tuple(counts.recall(c) for c in range(3)),
            counts=counts,
        )
    mean_f1 = float(np.mean([s.f1 for s in scores.values()]))
    return EvalReport(scores=scores, mean_f1=mean_f1, digests=dict(digests or {}))
