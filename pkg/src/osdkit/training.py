"""Class-weighted cross-entropy training with plateau LR decay and early stop.

The recipe: Adam at an initial rate of 1e-3; after every epoch the
validation loss is computed, and each epoch without improvement multiplies
the learning rate by 0.1 and advances an early-stop counter that aborts
training at 6; a hard cap stops at 100 epochs. All of these are config.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .annotations import DatasetStats
from .data import SegmentDataset
from .errors import ConfigError, DataError, TrainingDivergedError

STOP_EARLY = "early_stop"
STOP_MAX_EPOCHS = "max_epochs"


@dataclass(frozen=True)
class ClassWeights:
    """Unnormalized positive weights for (silence, single, overlap)."""

    values: tuple[float, float, float]

    def __post_init__(self) -> None:
        if len(self.values) != 3 or any(w <= 0 for w in self.values):
            raise ValueError("need three strictly positive class weights")

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls((1.0, 1.0, 1.0))

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.values, dtype=dtype)


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 0.001
    lr_decay: float = 0.1
    early_stop_patience: int = 6
    max_epochs: int = 100
    batch_size: int = 32
    weights_mode: str = "inverse_frequency"
    explicit_weights: tuple[float, float, float] | None = None
    fallback_weight: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.lr_decay < 1.0:
            raise ConfigError("lr_decay must be in (0, 1)")
        if self.initial_lr <= 0 or self.max_epochs < 1:
            raise ConfigError("initial_lr and max_epochs must be positive")
        if self.weights_mode not in ("uniform", "inverse_frequency", "explicit"):
            raise ConfigError(f"unknown weights_mode {self.weights_mode!r}")
        if self.weights_mode == "explicit" and self.explicit_weights is None:
            raise ConfigError("weights_mode=explicit needs explicit_weights")


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    epochs_since_improvement: int = 0
    current_lr: float = 0.001
    rng_digest: str = ""


def rng_digest() -> str:
    """Short fingerprint of the global torch RNG state, for the log."""
    return hashlib.sha256(torch.get_rng_state().numpy().tobytes()).hexdigest()[:8]


def weighted_ce(
    logits: torch.Tensor,
    targets: torch.Tensor,
    weights: ClassWeights | Sequence[float] | torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Weighted-mean categorical cross-entropy over valid frames.

    Computes sum_n -w[y_n] * log softmax(x_n)[y_n] / sum_n w[y_n] with the
    usual max-subtraction stabilization. Masked frames contribute exactly
    zero to both sums. Accepts (C, T) / (T,) or batched (B, C, T) / (B, T).
    """
    if logits.dim() == 2:
        logits = logits.unsqueeze(0)
        targets = targets.unsqueeze(0)
        if mask is not None:
            mask = mask.unsqueeze(0)
    if isinstance(weights, ClassWeights):
        w = weights.as_tensor(dtype=logits.dtype)
    elif isinstance(weights, torch.Tensor):
        w = weights.to(logits.dtype)
    else:
        w = torch.tensor(list(weights), dtype=logits.dtype)
    if (w <= 0).any():
        raise ValueError("class weights must be strictly positive")
    if not torch.isfinite(logits).all():
        raise ValueError("weighted_ce: non-finite logits")
    if mask is None:
        mask = torch.ones_like(targets, dtype=torch.bool)
    if not mask.any():
        raise ValueError("weighted_ce: empty mask, no valid frames")
    shifted = logits - logits.amax(dim=1, keepdim=True)
    log_norm = shifted.exp().sum(dim=1).log()
    log_prob = shifted.gather(1, targets.unsqueeze(1)).squeeze(1) - log_norm
    frame_w = w[targets] * mask.to(logits.dtype)
    return -(frame_w * log_prob).sum() / frame_w.sum()


def derive_weights(
    stats: DatasetStats,
    mode: str,
    *,
    explicit: Sequence[float] | None = None,
    fallback_weight: float | None = None,
) -> ClassWeights:
    """Class weights from dataset statistics.

    inverse_frequency sets w_c proportional to 1 / p_c, rescaled so the
    smallest weight is 1. A class with no frames has no finite inverse
    frequency; it takes ``fallback_weight``, which must then be provided.
    """
    if mode == "uniform":
        return ClassWeights.uniform()
    if mode == "explicit":
        if explicit is None:
            raise ConfigError("explicit weights mode needs a weight triple")
        return ClassWeights(tuple(float(x) for x in explicit))
    if mode != "inverse_frequency":
        raise ConfigError(f"unknown weights_mode {mode!r}")
    props = stats.class_proportions
    if any(p == 0 for p in props) and fallback_weight is None:
        raise ConfigError(
            "a class has zero frames; inverse_frequency needs fallback_weight"
        )
    inverse = [1.0 / p if p > 0 else None for p in props]
    scale = min(v for v in inverse if v is not None)
    return ClassWeights(
        tuple(v / scale if v is not None else float(fallback_weight) for v in inverse)
    )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float

    def to_line(self) -> str:
        return (
            f"epoch={self.epoch} train_loss={self.train_loss!r} "
            f"val_loss={self.val_loss!r} lr={self.lr!r} seconds={self.seconds:.3f}"
        )


@dataclass
class TrainingLog:
    entries: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0
    best_val_loss: float = math.inf
    header: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = ["# osdkit-train-log v1"]
        out += [f"# {k}={v}" for k, v in self.header.items()]
        out += [e.to_line() for e in self.entries]
        out.append(
            f"stop_reason={self.stop_reason} best_epoch={self.best_epoch} "
            f"best_val_loss={self.best_val_loss!r}"
        )
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")

    def loss_sequence(self) -> list[tuple[float, float, float]]:
        """(train_loss, val_loss, lr) per epoch; excludes wall-clock times."""
        return [(e.train_loss, e.val_loss, e.lr) for e in self.entries]


@dataclass
class TrainResult:
    log: TrainingLog
    stop_reason: str
    best_epoch: int
    best_val_loss: float
    state: TrainState


def evaluate_loss(
    model: torch.nn.Module,
    dataset: SegmentDataset,
    weights: ClassWeights,
    batch_size: int = 32,
) -> float:
    """Weighted-mean loss over an entire dataset, batch-size independent."""
    model.eval()
    w = weights.as_tensor()
    total = 0.0
    weight_sum = 0.0
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            idx = range(lo, min(lo + batch_size, len(dataset)))
            feats, targets, mask = dataset.batch_tensors(idx)
            logits = model(feats)
            shifted = logits - logits.amax(dim=1, keepdim=True)
            log_prob = (
                shifted.gather(1, targets.unsqueeze(1)).squeeze(1)
                - shifted.exp().sum(dim=1).log()
            )
            frame_w = w[targets] * mask.to(logits.dtype)
            total += float(-(frame_w * log_prob).sum())
            weight_sum += float(frame_w.sum())
    if weight_sum == 0:
        raise DataError("validation set has no valid frames")
    return total / weight_sum


def train(
    model: torch.nn.Module,
    train_set: SegmentDataset,
    val_set: SegmentDataset,
    config: TrainConfig,
    *,
    class_weights: ClassWeights | None = None,
    augmenter=None,
    val_loss_fn: Callable[[torch.nn.Module, int], float] | None = None,
) -> TrainResult:
    """Run the full training schedule and leave the best weights in ``model``.

    ``val_loss_fn`` replaces the validation-loss computation when given
    (epoch-stub testing); everything else, including the plateau decay and
    the early-stop counter, runs unchanged.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    weights = class_weights if class_weights is not None else ClassWeights.uniform()
    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.initial_lr, betas=(0.9, 0.999), eps=1e-8
    )
    state = TrainState(current_lr=config.initial_lr)
    log = TrainingLog(
        header={
            "seed": config.seed,
            "batch_size": config.batch_size,
            "initial_lr": config.initial_lr,
            "lr_decay": config.lr_decay,
            "early_stop_patience": config.early_stop_patience,
            "max_epochs": config.max_epochs,
            "class_weights": ",".join(repr(v) for v in weights.values),
            "augmented": augmenter is not None,
        }
    )
    best_state_dict = None
    stop_reason = STOP_MAX_EPOCHS
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        state.epoch = epoch
        model.train()
        order = np.random.default_rng([config.seed, 101, epoch]).permutation(
            len(train_set)
        )
        batch_losses = []
        for step, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            step_rng = (
                np.random.default_rng([config.seed, 202, epoch, step])
                if augmenter is not None
                else None
            )
            feats, targets, mask = train_set.batch_tensors(
                idx, augmenter=augmenter, rng=step_rng
            )
            optimizer.zero_grad()
            loss = weighted_ce(model(feats), targets, weights, mask)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, step {step}, "
                    f"lr={state.current_lr}"
                )
            loss.backward()
            optimizer.step()
            batch_losses.append(loss.item())
        train_loss = float(np.mean(batch_losses))
        if val_loss_fn is not None:
            val_loss = float(val_loss_fn(model, epoch))
        else:
            val_loss = evaluate_loss(model, val_set, weights, config.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(
                f"non-finite validation loss at epoch {epoch}, lr={state.current_lr}"
            )
        log.entries.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                lr=state.current_lr,
                seconds=time.perf_counter() - started,
            )
        )
        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.epochs_since_improvement = 0
            log.best_epoch = epoch
            best_state_dict = {
                k: v.detach().clone() for k, v in model.state_dict().items()
            }
        else:
            state.epochs_since_improvement += 1
            state.current_lr *= config.lr_decay
            for group in optimizer.param_groups:
                group["lr"] = state.current_lr
        state.rng_digest = rng_digest()
        if state.epochs_since_improvement >= config.early_stop_patience:
            stop_reason = STOP_EARLY
            break
    log.stop_reason = stop_reason
    log.best_val_loss = state.best_val_loss
    if best_state_dict is not None:
        model.load_state_dict(best_state_dict)
    model.eval()
    return TrainResult(
        log=log,
        stop_reason=stop_reason,
        best_epoch=log.best_epoch,
        best_val_loss=state.best_val_loss,
        state=state,
    )


def resample_to_proportions(
    records: Sequence,
    segment_class_counts: dict[str, np.ndarray],
    target: tuple[float, float, float] = (0.2, 0.7, 0.1),
    *,
    max_factor: float = 3.0,
    seed: int = 0,
) -> list:
    """Build a training sampling list whose class mix approaches ``target``.

    Greedily duplicates manifest records (up to ``max_factor`` times the
    original size) whenever a copy reduces the L1 distance between the
    aggregate class proportions and the target triple. The result may repeat
    segment ids; it is a sampling plan, not a manifest to write out.
    """
    if not records:
        raise DataError("empty record list")
    target_arr = np.asarray(target, dtype=np.float64)
    if target_arr.shape != (3,) or target_arr.sum() <= 0:
        raise ConfigError("target must be three nonnegative proportions")
    target_arr = target_arr / target_arr.sum()
    counts = {r.segment_id: np.asarray(segment_class_counts[r.segment_id]) for r in records}
    totals = np.sum([counts[r.segment_id] for r in records], axis=0).astype(np.float64)

    def distance(t: np.ndarray) -> float:
        return float(np.abs(t / t.sum() - target_arr).sum())

    plan = list(records)
    rng = np.random.default_rng(seed)
    order = list(rng.permutation(len(records)))
    cap = int(max_factor * len(records))
    while len(plan) < cap:
        best_gain, best_rec = 0.0, None
        for i in order:
            rec = records[i]
            gain = distance(totals) - distance(totals + counts[rec.segment_id])
            if gain > best_gain:
                best_gain, best_rec = gain, rec
        if best_rec is None:
            break
        plan.append(best_rec)
        totals = totals + counts[best_rec.segment_id]
    return plan


def frame_accuracy(model: torch.nn.Module, dataset: SegmentDataset, batch_size: int = 32) -> float:
    """Fraction of valid frames whose argmax class matches the target."""
    model.eval()
    correct = 0
    total = 0
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            idx = range(lo, min(lo + batch_size, len(dataset)))
            feats, targets, mask = dataset.batch_tensors(idx)
            pred = np.argmax(model(feats).numpy(), axis=1)
            m = mask.numpy()
            correct += int((pred[m] == targets.numpy()[m]).sum())
            total += int(m.sum())
    return correct / total if total else 0.0
