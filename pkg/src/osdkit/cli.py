"""Command-line entry point: prepare, stats, train, eval, make-fixtures.

Exit codes: 0 success, 2 configuration error (including cache digest
mismatches), 3 data error, 4 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import (
    DatasetStats,
    dataset_stats,
    load_labels,
    parse_rttm,
    rasterize_labels,
    read_manifest,
    save_labels,
    stats_by_tag,
)
from .data import FEATURES_SUBDIR, LABELS_SUBDIR, SegmentDataset, group_records_by_tag
from .errors import (
    ConfigError,
    DataError,
    EXIT_CONFIG_ERROR,
    EXIT_DATA_ERROR,
    EXIT_DIVERGED,
    EXIT_OK,
    OsdkitError,
    TrainingDivergedError,
)
from .features import (
    AudioClip,
    fbank,
    load_audio,
    read_feature_digest,
    save_feature_matrix,
    write_feature_meta,
)
from .fixtures import FixtureSpec, make_fixtures
from .metrics import evaluate
from .models import build_model, load_checkpoint, save_checkpoint
from .runconfig import RunConfig, build_run_config
from .training import ClassWeights, derive_weights, train

_STATE_FILE = "cache_state.txt"


def _read_cache_state(cache_dir: Path) -> dict[str, str]:
    path = cache_dir / _STATE_FILE
    state = {}
    if path.is_file():
        for line in path.read_text(encoding="ascii").splitlines():
            if "\t" in line:
                segment_id, digest = line.split("\t", 1)
                state[segment_id] = digest
    return state


def _write_cache_state(cache_dir: Path, state: dict[str, str]) -> None:
    lines = [f"{k}\t{v}" for k, v in sorted(state.items())]
    (cache_dir / _STATE_FILE).write_text("\n".join(lines) + "\n", encoding="ascii")


def _prepare_recording(args) -> tuple[dict[str, str], list[str], int, int]:
    """Prepare all segments of one recording; safe to run in a worker process."""
    recording_id, records, rttm_dir, cache_dir, feature_config, prior = args
    cache_dir = Path(cache_dir)
    state_updates: dict[str, str] = {}
    errors: list[str] = []
    done = skipped = 0
    rttm_path = Path(rttm_dir) / f"{recording_id}.rttm"
    audio_path = Path(records[0].audio_path)
    try:
        if not rttm_path.is_file():
            raise DataError(f"missing RTTM for {recording_id}: {rttm_path}")
        audio_sha = hashlib.sha256(audio_path.read_bytes()).hexdigest()
        rttm_sha = hashlib.sha256(rttm_path.read_bytes()).hexdigest()
        feat_digest = feature_config.digest()
        stamp = f"{audio_sha}|{rttm_sha}|{feat_digest}"
        clip = None
        turns = None
        for record in records:
            digest = hashlib.sha256(
                f"{stamp}|{record.start_sample}|{record.end_sample}".encode()
            ).hexdigest()[:16]
            feat_file = cache_dir / FEATURES_SUBDIR / f"{record.segment_id}.npz"
            label_file = cache_dir / LABELS_SUBDIR / f"{record.segment_id}.lab"
            if (
                prior.get(record.segment_id) == digest
                and feat_file.is_file()
                and label_file.is_file()
            ):
                state_updates[record.segment_id] = digest
                skipped += 1
                continue
            try:
                if clip is None:
                    clip = load_audio(audio_path)
                    turns = parse_rttm(rttm_path)
                if record.end_sample > len(clip):
                    raise DataError(
                        f"segment {record.segment_id}: span exceeds audio length"
                    )
                span_clip = AudioClip(
                    clip.samples[record.start_sample : record.end_sample],
                    source_id=record.segment_id,
                )
                n_frames = feature_config.frame_count(len(span_clip))
                pad_to = (
                    feature_config.frames_per_segment
                    if n_frames <= feature_config.frames_per_segment
                    else None
                )
                fm = fbank(span_clip, feature_config, pad_to=pad_to)
                fl = rasterize_labels(
                    turns,
                    (record.start_sample, record.end_sample),
                    feature_config.hop_s,
                    pad_to=fm.frame_count,
                    segment_id=record.segment_id,
                )
                save_feature_matrix(cache_dir / FEATURES_SUBDIR, fm)
                save_labels(cache_dir / LABELS_SUBDIR, fl, feat_digest)
                state_updates[record.segment_id] = digest
                done += 1
            except OsdkitError as exc:
                errors.append(f"{record.segment_id}: {exc}")
    except OsdkitError as exc:
        errors.append(f"{recording_id}: {exc}")
    return state_updates, errors, done, skipped


def cmd_prepare(cfg: RunConfig) -> int:
    """Cache features and labels for every manifest segment."""
    if not cfg["manifest"] or not cfg["rttm_dir"]:
        raise ConfigError("prepare needs manifest= and rttm_dir=")
    records = read_manifest(cfg["manifest"])
    if not records:
        raise DataError("empty manifest")
    feature_config = cfg.feature_config()
    cache_dir = cfg.cache_dir()
    (cache_dir / FEATURES_SUBDIR).mkdir(parents=True, exist_ok=True)
    (cache_dir / LABELS_SUBDIR).mkdir(parents=True, exist_ok=True)
    write_feature_meta(cache_dir / FEATURES_SUBDIR, feature_config)
    prior = _read_cache_state(cache_dir)
    by_recording = {}
    for r in records:
        by_recording.setdefault(r.recording_id, []).append(r)
    jobs = [
        (rec_id, recs, cfg["rttm_dir"], str(cache_dir), feature_config, prior)
        for rec_id, recs in sorted(by_recording.items())
    ]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            results = list(pool.map(_prepare_recording, jobs))
    else:
        results = [_prepare_recording(job) for job in jobs]
    state = dict(prior)
    all_errors: list[str] = []
    done = skipped = 0
    for updates, errors, n_done, n_skipped in results:
        state.update(updates)
        all_errors.extend(errors)
        done += n_done
        skipped += n_skipped
    _write_cache_state(cache_dir, state)
    print(f"prepared {done} segment(s), skipped {skipped} up-to-date, cache={cache_dir}")
    if all_errors:
        for err in all_errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA_ERROR
    return EXIT_OK


def _load_label_map(records, cache_dir: Path, expected_digest: str):
    return {
        r.segment_id: load_labels(cache_dir / LABELS_SUBDIR, r.segment_id, expected_digest)
        for r in records
    }


def _stats_row(name: str, stats: DatasetStats) -> str:
    return (
        f"{name:<14}{stats.total_hours:>9.3f}{stats.silence_hours:>10.3f}"
        f"{stats.single_hours:>9.3f}{stats.overlap_hours:>10.3f}"
        f"{stats.overlap_percent:>10.2f}"
    )


def cmd_stats(cfg: RunConfig) -> int:
    """Print per-tag hours and %overlap from cached labels."""
    if not cfg["manifest"]:
        raise ConfigError("stats needs manifest=")
    records = read_manifest(cfg["manifest"])
    if not records:
        raise DataError("empty manifest")
    feature_config = cfg.feature_config()
    cache_dir = cfg.cache_dir()
    stored = read_feature_digest(cache_dir / FEATURES_SUBDIR)
    if stored != feature_config.digest():
        raise ConfigError(
            f"cache at {cache_dir} was prepared with feature digest {stored!r}, "
            f"current config gives {feature_config.digest()!r}"
        )
    labels = _load_label_map(records, cache_dir, feature_config.digest())
    per_tag = stats_by_tag(records, labels, feature_config.hop_s)
    print(f"{'Dataset':<14}{'Hours':>9}{'Silence':>10}{'Single':>9}{'Overlap':>10}{'%Overlap':>10}")
    for tag, stats in per_tag.items():
        print(_stats_row(tag, stats))
    overall = dataset_stats(records, labels, feature_config.hop_s)
    print(_stats_row("ALL", overall))
    return EXIT_OK


def _class_weights_for(cfg: RunConfig, train_records, labels) -> ClassWeights:
    train_config = cfg.train_config()
    if train_config.weights_mode == "uniform":
        return ClassWeights.uniform()
    if train_config.weights_mode == "explicit":
        return ClassWeights(train_config.explicit_weights)
    stats = dataset_stats(train_records, labels, cfg.feature_config().hop_s)
    return derive_weights(
        stats, "inverse_frequency", fallback_weight=train_config.fallback_weight
    )


def cmd_train(cfg: RunConfig) -> int:
    """Train a model on the cached training subset."""
    if not cfg["manifest"]:
        raise ConfigError("train needs manifest=")
    records = read_manifest(cfg["manifest"])
    grouped = group_records_by_tag(records)
    train_records = grouped.get(cfg["train_tag"], [])
    val_records = grouped.get(cfg["val_tag"], [])
    if not train_records or not val_records:
        raise DataError(
            f"manifest has no '{cfg['train_tag']}'/'{cfg['val_tag']}' records"
        )
    feature_config = cfg.feature_config()
    cache_dir = cfg.cache_dir()
    policy = cfg.augment_policy()
    augmenter = None
    if policy is not None:
        from .augment import Augmenter

        augmenter = Augmenter(policy)
    train_set = SegmentDataset.from_cache(
        train_records,
        cache_dir,
        expected_digest=feature_config.digest(),
        with_audio=augmenter is not None,
        feature_config=feature_config,
    )
    val_set = SegmentDataset.from_cache(
        val_records, cache_dir, expected_digest=feature_config.digest()
    )
    labels = _load_label_map(train_records, cache_dir, feature_config.digest())
    weights = _class_weights_for(cfg, train_records, labels)
    model_config = cfg.model_config()
    model = build_model(model_config)
    train_config = cfg.train_config()
    result = train(
        model, train_set, val_set, train_config, class_weights=weights, augmenter=augmenter
    )
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(cfg["checkpoint"]) if cfg["checkpoint"] else (
        out_dir / f"{model_config.family.lower()}_best.ckpt"
    )
    save_checkpoint(
        ckpt_path,
        model,
        model_config,
        feature_digest=feature_config.digest(),
        meta={"best_epoch": result.best_epoch, "stop_reason": result.stop_reason},
    )
    result.log.header["model_digest"] = model_config.digest()
    result.log.header["feature_digest"] = feature_config.digest()
    log_path = out_dir / "train.log"
    result.log.write(log_path)
    print(
        f"trained {model_config.family}: stop={result.stop_reason} "
        f"best_epoch={result.best_epoch} best_val_loss={result.best_val_loss:.6f}"
    )
    print(f"checkpoint={ckpt_path}")
    print(f"log={log_path}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    """Score a checkpoint on the evaluation tags."""
    if not cfg["manifest"] or not cfg["checkpoint"]:
        raise ConfigError("eval needs manifest= and checkpoint=")
    model, model_config, meta = load_checkpoint(cfg["checkpoint"])
    feature_config = cfg.feature_config()
    cache_dir = cfg.cache_dir()
    stored = read_feature_digest(cache_dir / FEATURES_SUBDIR)
    current = feature_config.digest()
    trained_with = meta.get("feature_digest", "")
    if stored != current or (trained_with and trained_with != current):
        raise ConfigError(
            "feature digest mismatch: "
            f"cache={stored!r} config={current!r} checkpoint={trained_with!r}"
        )
    records = read_manifest(cfg["manifest"])
    grouped = group_records_by_tag(records)
    wanted = [t.strip() for t in cfg["eval_tags"].split(",") if t.strip()]
    missing = [t for t in wanted if t not in grouped]
    if missing:
        raise DataError(f"manifest has no records for tag(s): {missing}")
    datasets = {
        tag: SegmentDataset.from_cache(grouped[tag], cache_dir, expected_digest=current)
        for tag in wanted
    }
    report = evaluate(
        model,
        datasets,
        batch_size=cfg["batch_size"],
        digests={"model": model_config.digest(), "features": current},
        collar=cfg["collar"],
        median_filter=cfg["median_filter"],
    )
    print(report.format_table())
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "eval_report.txt"
    report.write(report_path)
    print(f"report={report_path}")
    return EXIT_OK


def cmd_make_fixtures(cfg: RunConfig) -> int:
    """Generate a synthetic corpus with known ground truth."""
    spec = FixtureSpec(
        out_dir=cfg["out_dir"],
        recordings=cfg["fix_recordings"],
        duration_s=cfg["fix_duration_s"],
        speakers=cfg["fix_speakers"],
        overlap_ratio=cfg["fix_overlap"],
        single_ratio=cfg["fix_single"],
        seed=cfg["seed"],
    )
    summary = make_fixtures(spec)
    print(f"manifest={summary.manifest_path}")
    print(f"rttm_dir={summary.rttm_dir}")
    print(f"noise_manifest={summary.noise_manifest}")
    print(f"rir_manifest={summary.rir_manifest}")
    for tag in sorted(summary.planted):
        print(f"planted_overlap_ratio_{tag}={summary.planted_overlap_ratio(tag):.6f}")
    return EXIT_OK


_COMMANDS = {
    "prepare": cmd_prepare,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "make-fixtures": cmd_make_fixtures,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osdkit",
        description="Overlapped speech detection toolkit: data prep, training, scoring.",
    )
    parser.add_argument("--version", action="version", version=f"osdkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        # argparse treats % in help text as a format directive
        p = sub.add_parser(name, help=(fn.__doc__ or "").replace("%", "%%"))
        p.add_argument("--config", help="flat KEY=VALUE config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--jobs", type=int, help="parallel workers where supported")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = build_run_config(
            args.config, args.overrides, seed=args.seed, jobs=args.jobs
        )
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OsdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
