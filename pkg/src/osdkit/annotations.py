"""RTTM parsing, frame-level three-class labels, and dataset statistics.

Labels use the fixed coding SILENCE=0, SINGLE=1, OVERLAP=2. A frame's class
is decided by the number of distinct speakers active at the frame center,
after merging overlapping turns of the same speaker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError, RttmParseError
from .features import SegmentSpan, TARGET_SAMPLE_RATE

SILENCE = 0
SINGLE = 1
OVERLAP = 2

LABEL_CODING = "silence:0,single:1,overlap:2"

# Sub-nanosecond slack when mapping turn boundaries onto frame centers;
# absorbs float rounding of times that sit exactly on a center.
_BOUNDARY_EPS = 1e-9

_LABEL_MAGIC = "osd-labels v1"


@dataclass(frozen=True)
class SpeakerTurn:
    """One speaker-active interval [onset, onset + duration) in a recording."""

    recording_id: str
    onset: float
    duration: float
    speaker_id: str

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"turn onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise ValueError(f"turn duration must be > 0, got {self.duration}")

    @property
    def offset(self) -> float:
        return self.onset + self.duration


def parse_rttm(path) -> list[SpeakerTurn]:
    """Parse SPEAKER lines of an RTTM file; other line types are skipped.

    Field layout: SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <spk> ...
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"RTTM file not found: {path}")
    turns = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        parts = line.split()
        if parts[0].upper() != "SPEAKER":
            continue
        if len(parts) < 8:
            raise RttmParseError(
                f"{path}:{lineno}: expected at least 8 fields, got {len(parts)}"
            )
        try:
            onset = float(parts[3])
            duration = float(parts[4])
        except ValueError:
            raise RttmParseError(
                f"{path}:{lineno}: malformed numeric field in {parts[3]!r}/{parts[4]!r}"
            ) from None
        if duration <= 0 or onset < 0:
            raise RttmParseError(
                f"{path}:{lineno}: onset/duration out of range ({onset}, {duration})"
            )
        turns.append(SpeakerTurn(parts[1], onset, duration, parts[7]))
    return turns


def write_rttm(path, turns: Iterable[SpeakerTurn]) -> None:
    lines = [
        f"SPEAKER {t.recording_id} 1 {t.onset:.2f} {t.duration:.2f} "
        f"<NA> <NA> {t.speaker_id} <NA> <NA>"
        for t in turns
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class FrameLabels:
    """Per-frame class sequence for one segment.

    Frames past valid_frames are padding, always SILENCE, and excluded from
    loss and metrics.
    """

    labels: np.ndarray
    hop_s: float
    segment_id: str = ""
    valid_frames: int | None = None

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if self.valid_frames is None:
            self.valid_frames = len(self.labels)
        if not 0 <= self.valid_frames <= len(self.labels):
            raise ValueError("valid_frames out of range")
        if self.labels.max(initial=0) > OVERLAP:
            raise ValueError("labels must be in {0, 1, 2}")
        if self.labels[self.valid_frames :].any():
            raise ValueError("padded frames must be SILENCE")

    @property
    def frame_count(self) -> int:
        return len(self.labels)


def merge_speaker_intervals(
    turns: Iterable[SpeakerTurn],
) -> dict[str, list[tuple[float, float]]]:
    """Merge overlapping or touching turns of the same speaker.

    Prevents double-counting a speaker against the overlap criterion when
    annotations carry overlapping same-speaker turns.
    """
    by_speaker: dict[str, list[tuple[float, float]]] = {}
    for t in turns:
        by_speaker.setdefault(t.speaker_id, []).append((t.onset, t.offset))
    merged = {}
    for spk, ivals in by_speaker.items():
        ivals.sort()
        out = [ivals[0]]
        for on, off in ivals[1:]:
            if on <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], off))
            else:
                out.append((on, off))
        merged[spk] = out
    return merged


def rasterize_labels(
    turns: Sequence[SpeakerTurn],
    span: SegmentSpan | tuple[int, int],
    hop_s: float = 0.010,
    *,
    sample_rate: int = TARGET_SAMPLE_RATE,
    pad_to: int | None = None,
    segment_id: str | None = None,
) -> FrameLabels:
    """Rasterize speaker turns into per-frame classes for one segment span.

    Frame t is centered at (t + 0.5) * hop seconds into the span; the label
    counts distinct speakers whose (same-speaker-merged) intervals contain
    that center. Turns outside the span contribute nothing.
    """
    if hop_s <= 0:
        raise ValueError("hop_s must be positive")
    if isinstance(span, SegmentSpan):
        start, end = span.start, span.end
        if segment_id is None:
            segment_id = span.segment_id
    else:
        start, end = span
    if end <= start:
        raise ValueError("segment span must be non-empty")
    hop_samples = int(round(hop_s * sample_rate))
    valid = (end - start) // hop_samples
    total = pad_to if pad_to is not None else valid
    if total < valid:
        raise ValueError(f"pad_to={pad_to} is below the {valid} valid frames")
    span_start_s = start / sample_rate
    counts = np.zeros(valid, dtype=np.int64)
    for intervals in merge_speaker_intervals(turns).values():
        for on, off in intervals:
            rel_on = on - span_start_s
            rel_off = off - span_start_s
            lo = max(0, math.ceil(rel_on / hop_s - 0.5 - _BOUNDARY_EPS))
            hi = min(valid, math.ceil(rel_off / hop_s - 0.5 - _BOUNDARY_EPS))
            if hi > lo:
                counts[lo:hi] += 1
    labels = np.zeros(total, dtype=np.uint8)
    labels[:valid] = np.minimum(counts, OVERLAP)
    return FrameLabels(
        labels=labels,
        hop_s=hop_s,
        segment_id=segment_id or "",
        valid_frames=valid,
    )


def collapse_to_binary(frame_labels: FrameLabels) -> np.ndarray:
    """Map {SILENCE, SINGLE} -> 0 and OVERLAP -> 1, keeping padding at 0."""
    return (frame_labels.labels == OVERLAP).astype(np.uint8)


@dataclass(frozen=True)
class ManifestRecord:
    """One segment: where its audio lives and which dataset it belongs to."""

    segment_id: str
    audio_path: str
    start_sample: int
    end_sample: int
    recording_id: str
    dataset_tag: str


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    lines = [
        "\t".join(
            (
                r.segment_id,
                r.audio_path,
                str(r.start_sample),
                str(r.end_sample),
                r.recording_id,
                r.dataset_tag,
            )
        )
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path) -> list[ManifestRecord]:
    """Read a TSV manifest. Relative audio paths are resolved against the
    manifest's own directory, so generated corpora stay relocatable."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    records = []
    seen = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise DataError(f"{path}:{lineno}: expected 6 tab-separated fields")
        try:
            start, end = int(parts[2]), int(parts[3])
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed sample span") from None
        if parts[0] in seen:
            raise DataError(f"{path}:{lineno}: duplicate segment_id {parts[0]!r}")
        if end <= start or start < 0:
            raise DataError(f"{path}:{lineno}: invalid span [{start}, {end})")
        seen.add(parts[0])
        audio = Path(parts[1])
        if not audio.is_absolute():
            audio = path.parent / audio
        records.append(ManifestRecord(parts[0], str(audio), start, end, parts[4], parts[5]))
    return records


@dataclass(frozen=True)
class DatasetStats:
    """Per-class hours over valid frames, plus the overlap percentage."""

    total_hours: float
    silence_hours: float
    single_hours: float
    overlap_hours: float
    overlap_percent: float

    @classmethod
    def from_frame_counts(cls, counts: Sequence[int], hop_s: float) -> "DatasetStats":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (3,):
            raise ValueError("need one count per class")
        hours = counts * hop_s / 3600.0
        total = float(hours.sum())
        if total <= 0:
            raise DataError("no valid frames to compute statistics over")
        return cls(
            total_hours=total,
            silence_hours=float(hours[SILENCE]),
            single_hours=float(hours[SINGLE]),
            overlap_hours=float(hours[OVERLAP]),
            overlap_percent=float(hours[OVERLAP]) / total * 100.0,
        )

    @property
    def class_proportions(self) -> tuple[float, float, float]:
        return (
            self.silence_hours / self.total_hours,
            self.single_hours / self.total_hours,
            self.overlap_hours / self.total_hours,
        )


def frame_counts(
    records: Sequence[ManifestRecord],
    labels_by_segment: Mapping[str, FrameLabels],
) -> np.ndarray:
    """Per-class valid-frame counts across a set of manifest records."""
    if not records:
        raise DataError("empty manifest")
    counts = np.zeros(3, dtype=np.int64)
    missing = []
    for r in records:
        fl = labels_by_segment.get(r.segment_id)
        if fl is None:
            missing.append(r.segment_id)
            continue
        counts += np.bincount(fl.labels[: fl.valid_frames], minlength=3)[:3]
    if missing:
        raise DataError(f"labels missing for {len(missing)} segment(s): {missing[:5]}")
    return counts


def dataset_stats(
    records: Sequence[ManifestRecord],
    labels_by_segment: Mapping[str, FrameLabels],
    hop_s: float = 0.010,
) -> DatasetStats:
    """Hours per class and %overlap over the valid frames of a manifest."""
    return DatasetStats.from_frame_counts(
        frame_counts(records, labels_by_segment), hop_s
    )


def stats_by_tag(
    records: Sequence[ManifestRecord],
    labels_by_segment: Mapping[str, FrameLabels],
    hop_s: float = 0.010,
) -> dict[str, DatasetStats]:
    """Statistics per dataset tag; commutative over record order."""
    if not records:
        raise DataError("empty manifest")
    tags = sorted({r.dataset_tag for r in records})
    return {
        tag: dataset_stats(
            [r for r in records if r.dataset_tag == tag], labels_by_segment, hop_s
        )
        for tag in tags
    }


def save_labels(cache_dir, fl: FrameLabels, config_digest: str = "") -> Path:
    """Write one label file: text header, '---' separator, one byte per frame."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{fl.segment_id}.lab"
    header = "\n".join(
        (
            _LABEL_MAGIC,
            f"segment_id={fl.segment_id}",
            f"hop_s={fl.hop_s!r}",
            f"frames={fl.frame_count}",
            f"valid_frames={fl.valid_frames}",
            f"coding={LABEL_CODING}",
            f"config_digest={config_digest}",
            "---",
        )
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(fl.labels.tobytes())
    return path


def load_labels(cache_dir, segment_id: str, expected_digest: str | None = None) -> FrameLabels:
    path = Path(cache_dir) / f"{segment_id}.lab"
    if not path.is_file():
        raise DataError(f"cached labels not found: {path}")
    blob = path.read_bytes()
    sep = blob.find(b"---\n")
    if not blob.startswith(_LABEL_MAGIC.encode("ascii")) or sep < 0:
        raise DataError(f"{path}: not a label cache file")
    meta = {}
    for line in blob[:sep].decode("ascii").splitlines()[1:]:
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key] = value
    frames = int(meta["frames"])
    if expected_digest is not None and meta.get("config_digest", "") != expected_digest:
        raise ConfigError(
            f"{path}: label cache was built with config digest "
            f"{meta.get('config_digest')!r}, expected {expected_digest!r}"
        )
    payload = blob[sep + 4 :]
    if len(payload) != frames:
        raise DataError(f"{path}: expected {frames} label bytes, found {len(payload)}")
    return FrameLabels(
        labels=np.frombuffer(payload, dtype=np.uint8).copy(),
        hop_s=float(meta["hop_s"]),
        segment_id=meta.get("segment_id", segment_id),
        valid_frames=int(meta["valid_frames"]),
    )
