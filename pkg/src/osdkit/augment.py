"""Waveform augmentation: additive noise at a target SNR and RIR convolution.

Noise and impulse responses are drawn independently per segment from the
step RNG, RIR first and noise second (noise models the capture channel after
reverberation). Labels are never touched: reverberation is applied with the
corpus RIRs peak-trimmed so the direct path stays at lag zero, well inside
one 10 ms frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import convolve

from .annotations import read_manifest
from .errors import ConfigError, DataError
from .features import AudioClip, load_audio

_ACTIVE_BLOCK_S = 0.010
_ACTIVE_THRESHOLD_DB = 40.0


@dataclass(frozen=True)
class AugmentPolicy:
    """Probabilities, SNR range, corpus manifests, and the RNG seed."""

    p_noise: float = 0.5
    p_rir: float = 0.5
    snr_range: tuple[float, float] = (5.0, 20.0)
    noise_manifest: str | None = None
    rir_manifest: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_noise <= 1.0 or not 0.0 <= self.p_rir <= 1.0:
            raise ConfigError("augmentation probabilities must be in [0, 1]")
        if self.snr_range[0] > self.snr_range[1]:
            raise ConfigError("snr_range must satisfy lo <= hi")


@dataclass(frozen=True)
class AugmentDecision:
    """What augment_batch did to one segment."""

    rir_applied: bool = False
    rir_index: int | None = None
    noise_applied: bool = False
    noise_index: int | None = None
    snr_db: float | None = None
    noise_offset: int | None = None
    peak_gain: float = 1.0

    def key(self) -> tuple:
        return (
            self.rir_applied,
            self.rir_index,
            self.noise_applied,
            self.noise_index,
            self.snr_db,
            self.noise_offset,
        )


def _active_power(x: np.ndarray, sample_rate: int) -> float:
    """Mean power over the active region (blocks within 40 dB of the loudest).

    Falls back to the whole-signal power when nothing clears the threshold.
    """
    block = max(1, int(round(_ACTIVE_BLOCK_S * sample_rate)))
    n_blocks = len(x) // block
    if n_blocks < 2:
        return float(np.mean(x**2))
    head = x[: n_blocks * block].reshape(n_blocks, block)
    energy = np.mean(head**2, axis=1)
    threshold = energy.max() * 10.0 ** (-_ACTIVE_THRESHOLD_DB / 10.0)
    active = energy >= threshold
    if not active.any():
        return float(np.mean(x**2))
    return float(energy[active].mean())


def _tile(noise: np.ndarray, length: int, offset: int) -> np.ndarray:
    idx = (offset + np.arange(length)) % len(noise)
    return noise[idx]


def add_noise(
    speech: AudioClip, noise: AudioClip, snr_db: float, *, noise_offset: int = 0
) -> AudioClip:
    """Mix noise into speech at the requested SNR.

    The gain g solves 10*log10(P_speech / (P_noise * g^2)) = snr_db with both
    powers measured over the speech's active region. Noise shorter than the
    speech is looped cyclically from ``noise_offset``. The mix is peak
    normalized only if it would clip, and the applied gain is recorded on
    the returned clip.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return speech
    s = speech.samples
    n = _tile(noise.samples, len(s), noise_offset % max(1, len(noise.samples)))
    p_speech = _active_power(s, speech.sample_rate)
    # noise power over the same region definition, on the tiled signal
    p_noise = _active_power(n, noise.sample_rate)
    if p_speech <= 0.0:
        raise DataError("add_noise: zero-power speech")
    if p_noise <= 0.0:
        raise DataError("add_noise: zero-power noise")
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    mix = s + gain * n
    peak = float(np.max(np.abs(mix)))
    peak_gain = 1.0
    if peak > 1.0:
        peak_gain = 1.0 / peak
        mix = mix * peak_gain
    return AudioClip(
        mix, speech.sample_rate, 1, source_id=speech.source_id, peak_gain=peak_gain
    )


def load_rir(path, *, align_peak: bool = True) -> np.ndarray:
    """Read an impulse response WAV; optionally trim everything before the peak
    so the direct path sits at lag zero."""
    clip = load_audio(path)
    h = clip.samples
    if not np.isfinite(h).all() or not np.any(h):
        raise DataError(f"{path}: empty or non-finite impulse response")
    if align_peak:
        h = h[int(np.argmax(np.abs(h))) :]
    return h


def apply_rir(speech: AudioClip, rir: np.ndarray) -> AudioClip:
    """Convolve with an impulse response, truncate to the input length, and
    rescale to the input RMS.

    A single-sample unit impulse reproduces the input exactly (direct
    convolution path, unity rescale).
    """
    h = np.asarray(rir, dtype=np.float64)
    if h.ndim != 1 or h.size == 0 or not np.any(h):
        raise DataError("apply_rir: empty impulse response")
    if not np.isfinite(h).all():
        raise DataError("apply_rir: non-finite impulse response")
    x = speech.samples
    y = convolve(x, h, mode="full", method="auto")[: len(x)]
    rms_in = math.sqrt(float(np.mean(x**2)))
    rms_out = math.sqrt(float(np.mean(y**2)))
    if rms_out > 0.0 and rms_in > 0.0:
        y = y * (rms_in / rms_out)
    return AudioClip(y, speech.sample_rate, 1, source_id=speech.source_id)


class Augmenter:
    """Preloaded noise/RIR corpora plus the per-segment augmentation draw."""

    def __init__(self, policy: AugmentPolicy) -> None:
        self.policy = policy
        self.noises: list[AudioClip] = []
        self.rirs: list[np.ndarray] = []
        if policy.noise_manifest:
            self.noises = _load_corpus(policy.noise_manifest)
        if policy.rir_manifest:
            self.rirs = [
                load_rir(r.audio_path)
                for r in read_manifest(policy.rir_manifest)
            ]
        if policy.p_noise > 0 and not self.noises:
            raise ConfigError("p_noise > 0 but the noise corpus is empty")
        if policy.p_rir > 0 and not self.rirs:
            raise ConfigError("p_rir > 0 but the RIR corpus is empty")

    def augment_clip(
        self, clip: AudioClip, rng: np.random.Generator
    ) -> tuple[AudioClip, AugmentDecision]:
        rir_applied = noise_applied = False
        rir_index = noise_index = noise_offset = None
        snr = None
        if rng.random() < self.policy.p_rir:
            rir_index = int(rng.integers(len(self.rirs)))
            clip = apply_rir(clip, self.rirs[rir_index])
            rir_applied = True
        if rng.random() < self.policy.p_noise:
            noise_index = int(rng.integers(len(self.noises)))
            noise = self.noises[noise_index]
            snr = float(rng.uniform(*self.policy.snr_range))
            noise_offset = int(rng.integers(len(noise.samples)))
            clip = add_noise(clip, noise, snr, noise_offset=noise_offset)
            noise_applied = True
        return clip, AugmentDecision(
            rir_applied=rir_applied,
            rir_index=rir_index,
            noise_applied=noise_applied,
            noise_index=noise_index,
            snr_db=snr,
            noise_offset=noise_offset,
            peak_gain=clip.peak_gain,
        )

    def augment_batch(
        self, clips: Sequence[AudioClip], step_rng: np.random.Generator
    ) -> tuple[list[AudioClip], list[AugmentDecision]]:
        """Augment each segment independently on its own RNG substream.

        Substream seeds are drawn from ``step_rng`` up front, so results do
        not depend on how the per-segment work would be scheduled.
        """
        seeds = step_rng.integers(0, 2**63 - 1, size=len(clips))
        out_clips, decisions = [], []
        for clip, seed in zip(clips, seeds):
            augmented, decision = self.augment_clip(
                clip, np.random.default_rng(int(seed))
            )
            out_clips.append(augmented)
            decisions.append(decision)
        return out_clips, decisions


def augment_batch(
    clips: Sequence[AudioClip],
    policy: AugmentPolicy,
    step_rng: np.random.Generator,
) -> tuple[list[AudioClip], list[AugmentDecision]]:
    """One-shot convenience wrapper around ``Augmenter.augment_batch``."""
    return Augmenter(policy).augment_batch(clips, step_rng)


def _load_corpus(manifest_path) -> list[AudioClip]:
    clips = []
    cache: dict[str, AudioClip] = {}
    for r in read_manifest(manifest_path):
        full = cache.get(r.audio_path)
        if full is None:
            full = load_audio(r.audio_path)
            cache[r.audio_path] = full
        clips.append(
            AudioClip(
                full.samples[r.start_sample : r.end_sample], source_id=r.segment_id
            )
        )
    return clips
