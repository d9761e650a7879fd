"""Training tests: loss oracle, weight derivation, schedule behavior."""

import math

import numpy as np
import pytest
import torch

from conftest import micro_dataset, toy_config
from osdkit.annotations import DatasetStats
from osdkit.errors import ConfigError, DataError, TrainingDivergedError
from osdkit.models import build_model
from osdkit.training import (
    STOP_EARLY,
    STOP_MAX_EPOCHS,
    ClassWeights,
    TrainConfig,
    derive_weights,
    evaluate_loss,
    frame_accuracy,
    resample_to_proportions,
    train,
    weighted_ce,
)


def ce_reference(logits, targets, weights, mask):
    """Term-by-term evaluation of the weighted cross-entropy in plain floats."""
    num = den = 0.0
    B, C, T = logits.shape
    for b in range(B):
        for t in range(T):
            if not mask[b, t]:
                continue
            x = [float(logits[b, c, t]) for c in range(C)]
            z = sum(math.exp(v) for v in x)
            y = int(targets[b, t])
            w = float(weights[y])
            num += -w * math.log(math.exp(x[y]) / z)
            den += w
    return num / den


class TestWeightedCE:
    def test_uniform_logits_give_ln3(self):
        logits = torch.zeros(2, 3, 7, dtype=torch.float64)
        targets = torch.randint(0, 3, (2, 7))
        loss = weighted_ce(logits, targets, ClassWeights.uniform())
        assert float(loss) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_single_confident_frame(self):
        logits = torch.tensor([[[0.0], [0.0], [10.0]]], dtype=torch.float64)
        targets = torch.tensor([[2]])
        loss = float(weighted_ce(logits, targets, (2.0, 7.0, 1.0)))
        expected = -math.log(math.exp(10.0) / (2.0 + math.exp(10.0)))
        assert loss == pytest.approx(expected, rel=1e-12)
        # with one frame the weight cancels under weighted-mean normalization
        other = float(weighted_ce(logits, targets, (5.0, 5.0, 90.0)))
        assert loss == pytest.approx(other, rel=1e-12)

    def test_matches_term_by_term_reference(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            B, T = int(rng.integers(1, 5)), int(rng.integers(2, 40))
            logits = rng.uniform(-8, 8, (B, 3, T))
            targets = rng.integers(0, 3, (B, T))
            mask = rng.random((B, T)) < 0.8
            if not mask.any():
                mask[0, 0] = True
            weights = rng.uniform(0.2, 9.0, 3)
            got = float(
                weighted_ce(
                    torch.from_numpy(logits),
                    torch.from_numpy(targets),
                    torch.from_numpy(weights),
                    torch.from_numpy(mask),
                )
            )
            assert got == pytest.approx(
                ce_reference(logits, targets, weights, mask), rel=1e-10
            )

    def test_masked_frames_contribute_exactly_zero(self):
        rng = np.random.default_rng(5)
        logits = torch.from_numpy(rng.uniform(-4, 4, (2, 3, 10)))
        targets = torch.from_numpy(rng.integers(0, 3, (2, 10)))
        mask = torch.ones(2, 10, dtype=torch.bool)
        mask[:, 7:] = False
        base = weighted_ce(logits, targets, (1.0, 2.0, 3.0), mask)
        perturbed = logits.clone()
        perturbed[:, :, 7:] = 1000.0
        after = weighted_ce(perturbed, targets, (1.0, 2.0, 3.0), mask)
        assert torch.equal(base, after)

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(6)
        logits = torch.from_numpy(rng.uniform(-3, 3, (1, 3, 30)))
        targets = torch.from_numpy(rng.integers(0, 3, (1, 30)))
        a = weighted_ce(logits, targets, (1.0, 2.0, 5.0))
        b = weighted_ce(logits, targets, (17.0, 34.0, 85.0))
        assert float(a) == pytest.approx(float(b), rel=1e-12)

    def test_weight_scaling_preserves_gradient_direction(self):
        rng = np.random.default_rng(7)
        base = torch.from_numpy(rng.uniform(-3, 3, (1, 3, 12)))
        targets = torch.from_numpy(rng.integers(0, 3, (1, 12)))
        grads = []
        for scale in (1.0, 11.0):
            logits = base.clone().requires_grad_(True)
            weighted_ce(logits, targets, (scale, 2 * scale, 5 * scale)).backward()
            grads.append(logits.grad.clone())
        assert torch.allclose(grads[0], grads[1], atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        logits = torch.from_numpy(rng.uniform(-2, 2, (1, 3, 6))).requires_grad_(True)
        targets = torch.from_numpy(rng.integers(0, 3, (1, 6)))
        weights = (1.0, 3.0, 0.5)
        weighted_ce(logits, targets, weights).backward()
        h = 1e-6
        flat = logits.detach().clone().view(-1)
        for i in range(flat.numel()):
            plus = flat.clone()
            plus[i] += h
            minus = flat.clone()
            minus[i] -= h
            fp = float(weighted_ce(plus.view(1, 3, 6), targets, weights))
            fm = float(weighted_ce(minus.view(1, 3, 6), targets, weights))
            fd = (fp - fm) / (2 * h)
            an = float(logits.grad.view(-1)[i])
            assert abs(fd - an) <= 1e-7 + 1e-4 * max(abs(fd), abs(an))

    def test_nonfinite_logits_rejected(self):
        logits = torch.tensor([[[float("nan")], [0.0], [0.0]]])
        with pytest.raises(ValueError, match="non-finite"):
            weighted_ce(logits, torch.tensor([[0]]), ClassWeights.uniform())

    def test_empty_mask_rejected(self):
        logits = torch.zeros(1, 3, 4)
        targets = torch.zeros(1, 4, dtype=torch.long)
        with pytest.raises(ValueError, match="empty mask"):
            weighted_ce(logits, targets, ClassWeights.uniform(), torch.zeros(1, 4, dtype=torch.bool))


def _stats(silence, single, overlap):
    counts = np.array([silence, single, overlap]) * 1000
    return DatasetStats.from_frame_counts(counts.astype(int), 0.010)


class TestDeriveWeights:
    def test_documented_proportions(self):
        w = derive_weights(_stats(0.2, 0.7, 0.1), "inverse_frequency")
        assert w.values == pytest.approx((3.5, 1.0, 7.0), rel=1e-12)

    def test_uniform(self):
        assert derive_weights(_stats(0.3, 0.3, 0.4), "uniform").values == (1.0, 1.0, 1.0)

    def test_equal_proportions_give_unit_weights(self):
        w = derive_weights(_stats(1 / 3, 1 / 3, 1 / 3), "inverse_frequency")
        assert w.values == pytest.approx((1.0, 1.0, 1.0))

    def test_explicit_passthrough(self):
        w = derive_weights(_stats(0.2, 0.7, 0.1), "explicit", explicit=(2.0, 7.0, 1.0))
        assert w.values == (2.0, 7.0, 1.0)

    def test_zero_class_requires_fallback(self):
        stats = DatasetStats.from_frame_counts([500, 500, 0], 0.010)
        with pytest.raises(ConfigError, match="fallback"):
            derive_weights(stats, "inverse_frequency")
        w = derive_weights(stats, "inverse_frequency", fallback_weight=4.0)
        assert w.values == (1.0, 1.0, 4.0)

    def test_nonpositive_weights_rejected(self):
        with pytest.raises(ValueError):
            ClassWeights((1.0, 0.0, 1.0))


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(early_stop_patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr_decay=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(weights_mode="nope")
        with pytest.raises(ConfigError):
            TrainConfig(weights_mode="explicit")


class TestSchedule:
    def _run(self, sequence=None, fn=None, max_epochs=100, patience=6):
        data = micro_dataset(2, frames=8, seed=0)
        model = build_model(toy_config("ROSD"))
        config = TrainConfig(
            max_epochs=max_epochs,
            early_stop_patience=patience,
            batch_size=2,
            weights_mode="uniform",
            seed=0,
        )
        if sequence is not None:
            remaining = list(sequence)
            fn = lambda model, epoch: remaining.pop(0)
        return train(model, data, data, config, val_loss_fn=fn)

    def test_early_stop_after_six_flat_evaluations(self):
        result = self._run(sequence=[5, 4, 4, 4, 4, 4, 4, 4])
        assert result.stop_reason == STOP_EARLY
        assert len(result.log.entries) == 8
        assert result.best_epoch == 2
        assert result.state.epochs_since_improvement == 6
        # decay fires on each non-improvement: lr while running epoch k
        lrs = [e.lr for e in result.log.entries]
        assert lrs == pytest.approx(
            [1e-3, 1e-3, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
        )

    def test_counter_never_exceeds_patience(self):
        result = self._run(sequence=[5, 4, 4, 4, 4, 4, 4, 4])
        assert result.state.epochs_since_improvement <= 6

    def test_max_epochs_stop(self):
        result = self._run(fn=lambda model, epoch: 1.0 / epoch, max_epochs=100)
        assert result.stop_reason == STOP_MAX_EPOCHS
        assert len(result.log.entries) == 100
        assert result.best_epoch == 100

    def test_divergence_aborts(self):
        with pytest.raises(TrainingDivergedError):
            self._run(fn=lambda model, epoch: float("nan"))

    def test_empty_sets_rejected(self):
        data = micro_dataset(1, frames=8)
        empty = micro_dataset(1, frames=8)
        empty.ids, empty.features = [], empty.features[:0]
        empty.targets, empty.masks = empty.targets[:0], empty.masks[:0]
        with pytest.raises(DataError):
            train(build_model(toy_config("ROSD")), empty, data, TrainConfig())

    def test_reproducible_loss_sequence(self):
        sequences = []
        for _ in range(2):
            data = micro_dataset(4, frames=16, seed=1)
            model = build_model(toy_config("CF", dropout=0.1, seed=2))
            config = TrainConfig(
                max_epochs=4, batch_size=2, weights_mode="uniform", seed=3
            )
            result = train(model, data, data, config)
            sequences.append(result.log.loss_sequence())
        assert sequences[0] == sequences[1]

    def test_best_weights_restored(self):
        data = micro_dataset(2, frames=8, seed=4)
        model = build_model(toy_config("ROSD"))
        config = TrainConfig(max_epochs=3, batch_size=2, weights_mode="uniform")
        result = train(
            model, data, data, config, val_loss_fn=lambda m, e: [1.0, 5.0, 5.0][e - 1]
        )
        assert result.best_epoch == 1
        # the restored model reproduces the best epoch's validation loss
        assert evaluate_loss(model, data, ClassWeights.uniform()) > 0


class TestResampling:
    def test_moves_mix_toward_target(self):
        rng = np.random.default_rng(9)
        from osdkit.annotations import ManifestRecord

        records, counts = [], {}
        for i in range(30):
            rec = ManifestRecord(f"s{i}", "a.wav", 0, 64000, "r", "train")
            records.append(rec)
            # mostly-silence corpus: overlap is rare
            counts[f"s{i}"] = np.array(
                [300, 80, 20] if i % 10 else [100, 100, 200], dtype=np.int64
            )
        target = (0.2, 0.7, 0.1)
        plan = resample_to_proportions(records, counts, target, seed=0)
        assert len(plan) >= len(records)

        def mix(plan):
            total = np.sum([counts[r.segment_id] for r in plan], axis=0)
            return total / total.sum()

        before = np.abs(mix(records) - np.array(target)).sum()
        after = np.abs(mix(plan) - np.array(target)).sum()
        assert after <= before

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            resample_to_proportions([], {}, (0.2, 0.7, 0.1))


def test_frame_accuracy_counts_valid_frames_only():
    data = micro_dataset(2, frames=10, seed=11)
    data.masks[:, 5:] = False

    class Stub:
        def eval(self):
            return self

        def __call__(self, feats):
            B, _, T = feats.shape
            logits = torch.zeros(B, 3, T)
            return logits

    # stub predicts class 0 everywhere; accuracy equals the silence fraction
    acc = frame_accuracy(Stub(), data)
    expected = float((data.targets[data.masks] == 0).mean())
    assert acc == pytest.approx(expected)
