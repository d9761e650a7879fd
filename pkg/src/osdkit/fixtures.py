"""Synthetic corpora with known ground truth.

Each synthetic speaker is a fixed two-harmonic tone, so single speech and
overlapped speech have cleanly separable spectra and a small model can learn
the task end to end. Timelines are built on the 10 ms frame grid with exact
per-class frame budgets, recordings are written as 16-bit WAV plus RTTM, and
the planted statistics are recorded so tests can use them as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .annotations import ManifestRecord, SpeakerTurn, write_manifest, write_rttm
from .errors import ConfigError
from .features import AudioClip, segment

FRAME_S = 0.010
SAMPLE_RATE = 16000
FRAME_SAMPLES = int(FRAME_S * SAMPLE_RATE)

_TONE_AMP = 0.35
_HARMONIC_AMP = 0.12
_NOISE_FLOOR = 1e-3


@dataclass(frozen=True)
class FixtureSpec:
    out_dir: str
    recordings: int = 10
    duration_s: float = 48.0
    speakers: int = 4
    overlap_ratio: float = 0.15
    single_ratio: float = 0.55
    seed: int = 0
    min_run_s: float = 0.4
    max_run_s: float = 2.0
    noise_clips: int = 2
    rir_clips: int = 2

    def __post_init__(self) -> None:
        if self.recordings < 3:
            raise ConfigError("need at least 3 recordings for a train/dev/eval split")
        if self.speakers < 2:
            raise ConfigError("need at least 2 speakers to produce overlap")
        if not (0 < self.overlap_ratio and 0 < self.single_ratio and self.overlap_ratio + self.single_ratio <= 1):
            raise ConfigError("class ratios must be positive and sum to at most 1")
        if self.duration_s * 100 != int(self.duration_s * 100):
            raise ConfigError("duration_s must sit on the 10 ms grid")
        if self.min_run_s >= self.max_run_s or self.min_run_s <= 0:
            raise ConfigError("need 0 < min_run_s < max_run_s")


@dataclass
class FixtureSummary:
    manifest_path: Path
    rttm_dir: Path
    audio_dir: Path
    noise_manifest: Path
    rir_manifest: Path
    meta_path: Path
    # per dataset tag plus "all": (overlap_frames, total_frames)
    planted: dict[str, tuple[int, int]] = field(default_factory=dict)

    def planted_overlap_ratio(self, tag: str = "all") -> float:
        overlap, total = self.planted[tag]
        return overlap / total


def speaker_frequency(index: int) -> float:
    """Fundamental of synthetic speaker ``index``; spaced so 64 mel bins
    resolve every voice and every pair of voices."""
    return 250.0 * (1.5**index)


def _plan_runs(
    n_frames: int,
    overlap_frames: int,
    single_frames: int,
    rng: np.random.Generator,
    min_run: int,
    max_run: int,
) -> list[tuple[int, int]]:
    """Random (state, length) runs hitting the exact per-class frame budgets."""
    remaining = [n_frames - overlap_frames - single_frames, single_frames, overlap_frames]
    runs: list[tuple[int, int]] = []
    prev = -1
    while sum(remaining) > 0:
        choices = [s for s in (0, 1, 2) if remaining[s] > 0 and s != prev]
        if not choices:
            choices = [s for s in (0, 1, 2) if remaining[s] > 0]
        weights = np.array([remaining[s] for s in choices], dtype=np.float64)
        state = int(rng.choice(choices, p=weights / weights.sum()))
        length = int(min(remaining[state], rng.integers(min_run, max_run + 1)))
        runs.append((state, length))
        remaining[state] -= length
        prev = state
    return runs


def _runs_to_turns(
    runs: list[tuple[int, int]],
    recording_id: str,
    n_speakers: int,
    rng: np.random.Generator,
) -> list[SpeakerTurn]:
    turns = []
    frame = 0
    for state, length in runs:
        onset = frame * FRAME_S
        duration = length * FRAME_S
        if state == 1:
            spk = int(rng.integers(n_speakers))
            turns.append(SpeakerTurn(recording_id, onset, duration, f"spk{spk}"))
        elif state == 2:
            pair = rng.choice(n_speakers, size=2, replace=False)
            for spk in pair:
                turns.append(SpeakerTurn(recording_id, onset, duration, f"spk{int(spk)}"))
        frame += length
    return turns


def _synthesize(
    turns: list[SpeakerTurn], n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    x = rng.normal(0.0, _NOISE_FLOOR, n_samples)
    for t in turns:
        spk = int(t.speaker_id.removeprefix("spk"))
        f0 = speaker_frequency(spk)
        lo = int(round(t.onset * SAMPLE_RATE))
        hi = min(n_samples, int(round(t.offset * SAMPLE_RATE)))
        n = np.arange(lo, hi)
        x[lo:hi] += _TONE_AMP * np.sin(2 * np.pi * f0 * n / SAMPLE_RATE)
        x[lo:hi] += _HARMONIC_AMP * np.sin(2 * np.pi * 2 * f0 * n / SAMPLE_RATE)
    return x


def _write_wav(path: Path, x: np.ndarray) -> None:
    q = np.round(np.clip(x, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), SAMPLE_RATE, q)


def _split_tags(n_recordings: int) -> list[str]:
    n_dev = max(1, n_recordings // 5)
    n_eval = max(1, n_recordings // 5)
    n_train = n_recordings - n_dev - n_eval
    return ["train"] * n_train + ["dev"] * n_dev + ["eval"] * n_eval


def make_fixtures(spec: FixtureSpec) -> FixtureSummary:
    """Generate WAV + RTTM + manifests plus small noise/RIR corpora.

    Deterministic: the same spec (seed included) produces byte-identical
    output trees.
    """
    out = Path(spec.out_dir)
    audio_dir = out / "audio"
    rttm_dir = out / "rttm"
    noise_dir = out / "noise"
    rir_dir = out / "rir"
    for d in (audio_dir, rttm_dir, noise_dir, rir_dir):
        d.mkdir(parents=True, exist_ok=True)

    n_frames = int(round(spec.duration_s / FRAME_S))
    overlap_frames = int(round(spec.overlap_ratio * n_frames))
    single_frames = int(round(spec.single_ratio * n_frames))
    min_run = max(1, int(round(spec.min_run_s / FRAME_S)))
    max_run = max(min_run + 1, int(round(spec.max_run_s / FRAME_S)))
    tags = _split_tags(spec.recordings)

    records: list[ManifestRecord] = []
    planted: dict[str, list[int]] = {}
    for rec_index in range(spec.recordings):
        rec_id = f"rec_{rec_index:03d}"
        rng = np.random.default_rng([spec.seed, rec_index])
        runs = _plan_runs(n_frames, overlap_frames, single_frames, rng, min_run, max_run)
        turns = _runs_to_turns(runs, rec_id, spec.speakers, rng)
        x = _synthesize(turns, n_frames * FRAME_SAMPLES, rng)
        _write_wav(audio_dir / f"{rec_id}.wav", x)
        write_rttm(rttm_dir / f"{rec_id}.rttm", turns)
        clip = AudioClip(x, SAMPLE_RATE, 1, source_id=rec_id)
        tag = tags[rec_index]
        for span in segment(clip, 4.0):
            records.append(
                ManifestRecord(
                    segment_id=span.segment_id,
                    audio_path=f"audio/{rec_id}.wav",
                    start_sample=span.start,
                    end_sample=span.end,
                    recording_id=rec_id,
                    dataset_tag=tag,
                )
            )
        acc = planted.setdefault(tag, [0, 0])
        acc[0] += overlap_frames
        acc[1] += n_frames
        total = planted.setdefault("all", [0, 0])
        total[0] += overlap_frames
        total[1] += n_frames

    manifest_path = out / "manifest.tsv"
    write_manifest(manifest_path, records)

    noise_records = []
    for i in range(spec.noise_clips):
        rng = np.random.default_rng([spec.seed, 9000 + i])
        n = 5 * SAMPLE_RATE
        if i % 2 == 0:
            x = rng.uniform(-0.3, 0.3, n)
        else:
            x = np.convolve(rng.uniform(-0.5, 0.5, n), np.ones(8) / 8.0, mode="same")
        path = noise_dir / f"noise_{i:02d}.wav"
        _write_wav(path, x)
        noise_records.append(
            ManifestRecord(f"noise_{i:02d}", f"noise/noise_{i:02d}.wav", 0, n, f"noise_{i:02d}", "noise")
        )
    noise_manifest = out / "noise_manifest.tsv"
    write_manifest(noise_manifest, noise_records)

    rir_records = []
    for i in range(spec.rir_clips):
        rng = np.random.default_rng([spec.seed, 9500 + i])
        length = 1600
        tau = 200.0 * (i + 1)
        h = np.zeros(length)
        h[0] = 1.0  # direct path at lag zero keeps labels valid
        tail = rng.normal(0.0, 0.25, length - 1) * np.exp(-np.arange(1, length) / tau)
        h[1:] = np.clip(tail, -0.7, 0.7)
        path = rir_dir / f"rir_{i:02d}.wav"
        _write_wav(path, h)
        rir_records.append(
            ManifestRecord(f"rir_{i:02d}", f"rir/rir_{i:02d}.wav", 0, length, f"rir_{i:02d}", "rir")
        )
    rir_manifest = out / "rir_manifest.tsv"
    write_manifest(rir_manifest, rir_records)

    meta_path = out / "fixtures.meta"
    meta = [
        f"seed={spec.seed}",
        f"recordings={spec.recordings}",
        f"duration_s={spec.duration_s!r}",
        f"speakers={spec.speakers}",
        f"requested_overlap_ratio={spec.overlap_ratio!r}",
        f"requested_single_ratio={spec.single_ratio!r}",
        "speaker_freqs=" + ",".join(f"{speaker_frequency(i):.1f}" for i in range(spec.speakers)),
    ]
    for tag in sorted(planted):
        overlap, total = planted[tag]
        meta.append(f"planted_overlap_frames_{tag}={overlap}")
        meta.append(f"planted_total_frames_{tag}={total}")
        meta.append(f"planted_overlap_ratio_{tag}={overlap / total!r}")
    meta_path.write_text("\n".join(meta) + "\n", encoding="ascii")

    return FixtureSummary(
        manifest_path=manifest_path,
        rttm_dir=rttm_dir,
        audio_dir=audio_dir,
        noise_manifest=noise_manifest,
        rir_manifest=rir_manifest,
        meta_path=meta_path,
        planted={tag: (v[0], v[1]) for tag, v in planted.items()},
    )
