"""Audio ingestion, fixed-length segmentation, and log-mel filterbank features.

The front end is written out explicitly (framing, windowing, DFT, mel
weighting) so cached features are reproducible bit for bit from the recorded
configuration, and so tests can check it against independent references.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import AudioFormatError, DataError

TARGET_SAMPLE_RATE = 16000

FEATURE_META_NAME = "features.meta"


@dataclass
class AudioClip:
    """Mono 16 kHz waveform with float samples in [-1, 1].

    peak_gain records the peak-normalization factor applied when the clip was
    produced by mixing (1.0 means the signal was never rescaled).
    """

    samples: np.ndarray
    sample_rate: int = TARGET_SAMPLE_RATE
    channel_count: int = 1
    source_id: str = ""
    peak_gain: float = 1.0

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatError("AudioClip samples must be one-dimensional")
        if self.sample_rate != TARGET_SAMPLE_RATE:
            raise AudioFormatError(
                f"unsupported sample rate {self.sample_rate} Hz; the pipeline is 16 kHz only"
            )
        if self.channel_count != 1:
            raise AudioFormatError("AudioClip must be mono")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


def _pcm_to_float(data: np.ndarray, path: Path) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise AudioFormatError(f"{path}: unsupported WAV sample format {data.dtype}")


def load_audio(path, downmix: bool = False, resample: bool = False) -> AudioClip:
    """Read a PCM (8/16/32-bit) or IEEE-float WAV file as a mono 16 kHz clip.

    Multi-channel input is averaged across channels only when ``downmix`` is
    set; non-16 kHz input is converted only when ``resample`` is set.
    Anything else is rejected rather than silently altered.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise AudioFormatError(f"{path}: cannot read WAV file ({exc})") from exc
    x = _pcm_to_float(np.atleast_1d(data), path)
    if x.ndim == 2:
        if x.shape[1] == 1:
            x = x[:, 0]
        elif downmix:
            x = x.mean(axis=1)
        else:
            raise AudioFormatError(
                f"{path}: {x.shape[1]} channels; pass downmix=True to average them"
            )
    if rate != TARGET_SAMPLE_RATE:
        if not resample:
            raise AudioFormatError(
                f"{path}: unsupported sample rate {rate} Hz "
                f"(expected {TARGET_SAMPLE_RATE}; pass resample=True to convert)"
            )
        from scipy.signal import resample_poly

        g = math.gcd(TARGET_SAMPLE_RATE, int(rate))
        x = resample_poly(x, TARGET_SAMPLE_RATE // g, int(rate) // g)
    return AudioClip(x, TARGET_SAMPLE_RATE, 1, source_id=path.stem)


@dataclass(frozen=True)
class SegmentSpan:
    """Half-open sample span [start, end) of one segment within a recording."""

    segment_id: str
    start: int
    end: int
    is_partial: bool = False

    @property
    def n_samples(self) -> int:
        return self.end - self.start


def segment(clip: AudioClip, seg_seconds: float = 4.0) -> list[SegmentSpan]:
    """Tile a clip left to right into fixed-length spans.

    All spans except possibly the last cover exactly ``seg_seconds``; a
    shorter final span is kept and flagged partial.
    """
    if seg_seconds <= 0:
        raise ValueError("seg_seconds must be positive")
    n = len(clip)
    if n == 0:
        raise DataError(f"empty clip: {clip.source_id!r}")
    step = int(round(seg_seconds * clip.sample_rate))
    spans = []
    for i, start in enumerate(range(0, n, step)):
        end = min(start + step, n)
        spans.append(
            SegmentSpan(
                segment_id=f"{clip.source_id}_{i:04d}",
                start=start,
                end=end,
                is_partial=(end - start) < step,
            )
        )
    return spans


@dataclass(frozen=True)
class FeatureConfig:
    """Log-mel filterbank front-end settings.

    Defaults give 64 mel bins at a 10 ms hop with a 25 ms window; under
    center padding a 4 s segment yields exactly 400 frames, with frame t
    centered at (t + 0.5) * hop.
    """

    sample_rate: int = TARGET_SAMPLE_RATE
    hop_s: float = 0.010
    window_s: float = 0.025
    mel_bins: int = 64
    n_fft: int = 512
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    window_fn: str = "hann"
    mel_scale: str = "htk"
    segment_s: float = 4.0

    def __post_init__(self) -> None:
        if self.sample_rate != TARGET_SAMPLE_RATE:
            raise ValueError("sample_rate is pinned to 16000")
        if self.mel_bins != 64:
            raise ValueError("mel_bins is pinned to 64")
        if self.window_fn != "hann":
            raise ValueError(f"unknown window_fn {self.window_fn!r}")
        if self.mel_scale != "htk":
            raise ValueError(f"unknown mel_scale {self.mel_scale!r}")
        if self.hop_s <= 0 or self.window_s < self.hop_s:
            raise ValueError("need 0 < hop_s <= window_s")
        if self.n_fft < self.window_samples:
            raise ValueError("n_fft must be at least the window length")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.fmax_hz > self.sample_rate / 2 or self.fmin_hz >= self.fmax_hz:
            raise ValueError("need 0 <= fmin_hz < fmax_hz <= Nyquist")

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate))

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_s * self.sample_rate))

    @property
    def frames_per_segment(self) -> int:
        return self.frame_count(self.segment_samples)

    def frame_count(self, n_samples: int) -> int:
        """Frames produced for a span of ``n_samples``.

        With (window - hop) total center padding this equals
        floor((n + pad - window) / hop) + 1 == n // hop.
        """
        if n_samples < self.window_samples:
            raise DataError(
                f"span of {n_samples} samples is shorter than one "
                f"{self.window_samples}-sample analysis window"
            )
        return n_samples // self.hop_samples

    def meta_lines(self) -> list[str]:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return lines

    def digest(self) -> str:
        h = hashlib.sha256("\n".join(self.meta_lines()).encode("ascii"))
        return h.hexdigest()[:12]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filter_matrix(config: FeatureConfig) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape (mel_bins, n_fft // 2 + 1)."""
    edges = _mel_to_hz(
        np.linspace(
            _hz_to_mel(config.fmin_hz), _hz_to_mel(config.fmax_hz), config.mel_bins + 2
        )
    )
    freqs = np.arange(config.n_fft // 2 + 1) * (config.sample_rate / config.n_fft)
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:, None] - edges[1:-1, None])
    fb = np.maximum(0.0, np.minimum(lower, upper))
    fb.flags.writeable = False
    return fb


@lru_cache(maxsize=8)
def _analysis_window(config: FeatureConfig) -> np.ndarray:
    n = config.window_samples
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)  # periodic Hann
    w.flags.writeable = False
    return w


@dataclass
class FeatureMatrix:
    """Log-mel features for one segment, shape (mel_bins, frame_count).

    Columns past valid_frames are zero padding and must be excluded from
    training and scoring.
    """

    values: np.ndarray
    valid_frames: int
    hop_s: float
    window_s: float
    segment_id: str = ""

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("FeatureMatrix values must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValueError("FeatureMatrix contains non-finite values")
        if not 0 <= self.valid_frames <= self.frame_count:
            raise ValueError("valid_frames out of range")

    @property
    def mel_bins(self) -> int:
        return self.values.shape[0]

    @property
    def frame_count(self) -> int:
        return self.values.shape[1]


def fbank(
    clip: AudioClip,
    config: FeatureConfig = FeatureConfig(),
    *,
    pad_to: int | None = None,
    segment_id: str | None = None,
) -> FeatureMatrix:
    """Log-mel features for one segment span.

    The signal is padded by (window - hop) samples split across both ends,
    so frame t covers [t*hop - pad_left, t*hop - pad_left + window) and is
    centered at (t + 0.5) * hop. Each frame is Hann-windowed, zero-padded to
    n_fft, and turned into power-spectrum mel energies that are floored
    before the natural log. Pass ``pad_to`` to zero-pad the frame axis of a
    partial segment up to the full segment length.
    """
    x = np.asarray(clip.samples, dtype=np.float64)
    n = len(x)
    hop = config.hop_samples
    win = config.window_samples
    n_frames = config.frame_count(n)  # raises for spans under one window
    pad_total = win - hop
    pad_left = pad_total // 2
    padded = np.pad(x, (pad_left, pad_total - pad_left))
    starts = np.arange(n_frames) * hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, win)[starts]
    spectrum = np.fft.rfft(frames * _analysis_window(config), n=config.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filter_matrix(config).T
    values = np.log(np.maximum(mel, config.log_floor)).T
    if pad_to is not None:
        if pad_to < n_frames:
            raise ValueError(f"pad_to={pad_to} is below the {n_frames} computed frames")
        values = np.pad(values, ((0, 0), (0, pad_to - n_frames)))
    return FeatureMatrix(
        values=values.astype(np.float32),
        valid_frames=n_frames,
        hop_s=config.hop_s,
        window_s=config.window_s,
        segment_id=segment_id if segment_id is not None else clip.source_id,
    )


def write_feature_meta(cache_dir, config: FeatureConfig) -> Path:
    """Write the self-describing key-value digest next to cached features."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / FEATURE_META_NAME
    lines = config.meta_lines() + [f"config_digest={config.digest()}"]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_feature_digest(cache_dir) -> str:
    path = Path(cache_dir) / FEATURE_META_NAME
    if not path.is_file():
        raise DataError(f"feature cache metadata not found: {path}")
    for line in path.read_text(encoding="ascii").splitlines():
        if line.startswith("config_digest="):
            return line.split("=", 1)[1].strip()
    raise DataError(f"no config_digest recorded in {path}")


def save_feature_matrix(cache_dir, fm: FeatureMatrix) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{fm.segment_id}.npz"
    np.savez(
        path,
        values=fm.values,
        valid_frames=np.int64(fm.valid_frames),
        hop_s=np.float64(fm.hop_s),
        window_s=np.float64(fm.window_s),
    )
    return path


def load_feature_matrix(cache_dir, segment_id: str) -> FeatureMatrix:
    path = Path(cache_dir) / f"{segment_id}.npz"
    if not path.is_file():
        raise DataError(f"cached features not found: {path}")
    with np.load(path) as data:
        return FeatureMatrix(
            values=data["values"],
            valid_frames=int(data["valid_frames"]),
            hop_s=float(data["hop_s"]),
            window_s=float(data["window_s"]),
            segment_id=segment_id,
        )
