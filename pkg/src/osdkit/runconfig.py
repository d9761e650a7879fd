"""Flat key-value run configuration shared by every CLI command.

Config files are plain ``KEY=VALUE`` lines ('#' starts a comment). Every key
must be in the schema below; unknown keys are rejected so typos cannot
silently change an experiment. ``--set KEY=VALUE`` overrides file values,
and the OSD_CACHE_DIR environment variable overrides ``cache_dir``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .augment import AugmentPolicy
from .errors import ConfigError
from .features import FeatureConfig
from .models import ModelConfig, default_config
from .training import TrainConfig

_UNSET = ""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type constructor, default, help)
SCHEMA: dict[str, tuple[Any, Any, str]] = {
    # paths
    "manifest": (str, _UNSET, "segment manifest (TSV)"),
    "rttm_dir": (str, _UNSET, "directory of <recording_id>.rttm files"),
    "cache_dir": (str, "cache", "root of the feature/label cache"),
    "out_dir": (str, "out", "directory for checkpoints, logs, reports, fixtures"),
    "checkpoint": (str, _UNSET, "checkpoint path (eval input; train output override)"),
    # dataset tags
    "train_tag": (str, "train", "manifest tag of the training subset"),
    "val_tag": (str, "dev", "manifest tag of the validation subset"),
    "eval_tags": (str, "eval", "comma-separated manifest tags to score"),
    # feature front end
    "hop_s": (float, 0.010, "frame hop in seconds"),
    "window_s": (float, 0.025, "analysis window in seconds"),
    "n_fft": (int, 512, "FFT size"),
    "mel_fmin": (float, 0.0, "lowest mel filter edge (Hz)"),
    "mel_fmax": (float, 8000.0, "highest mel filter edge (Hz)"),
    "log_floor": (float, 1e-10, "energy floor applied before the log"),
    "segment_s": (float, 4.0, "segment length in seconds"),
    # model
    "family": (str, "CF", "encoder family: TF, TCN, CF, or ROSD"),
    "model_dim": (int, 0, "encoder width; 0 uses the family preset"),
    "block_count": (int, 0, "encoder blocks; 0 uses the family preset"),
    "head_count": (int, 0, "attention heads; 0 uses the family preset"),
    "ffn_dim": (int, 0, "feed-forward width; 0 uses the family preset"),
    "conv_kernel": (int, 0, "depthwise conv kernel (CF); 0 uses the preset"),
    "tcn_resblocks_per_block": (int, 0, "res-blocks per TCN block; 0 uses the preset"),
    "hidden_dim": (int, 0, "BiLSTM width per direction (ROSD); 0 uses the preset"),
    "dropout": (float, 0.1, "dropout probability"),
    # training
    "initial_lr": (float, 0.001, "Adam initial learning rate"),
    "lr_decay": (float, 0.1, "multiplicative LR decay on plateau"),
    "early_stop_patience": (int, 6, "non-improving evaluations before stopping"),
    "max_epochs": (int, 100, "epoch cap"),
    "batch_size": (int, 32, "segments per batch"),
    "weights_mode": (str, "inverse_frequency", "uniform, inverse_frequency, or explicit"),
    "class_weights": (str, _UNSET, "explicit silence,single,overlap weights"),
    "fallback_weight": (float, 0.0, "weight for a zero-frequency class (0 = unset)"),
    # augmentation
    "p_noise": (float, 0.0, "per-segment probability of additive noise"),
    "p_rir": (float, 0.0, "per-segment probability of RIR convolution"),
    "snr_lo": (float, 5.0, "lower SNR bound (dB)"),
    "snr_hi": (float, 20.0, "upper SNR bound (dB)"),
    "noise_manifest": (str, _UNSET, "manifest of noise clips"),
    "rir_manifest": (str, _UNSET, "manifest of impulse responses"),
    # scoring
    "collar": (int, 0, "frames excluded around reference overlap boundaries"),
    "median_filter": (int, 0, "odd median-filter width over predicted labels (0 = off)"),
    # fixtures
    "fix_recordings": (int, 10, "synthetic recordings to generate"),
    "fix_duration_s": (float, 48.0, "seconds per synthetic recording"),
    "fix_speakers": (int, 4, "synthetic speaker count"),
    "fix_overlap": (float, 0.15, "planted overlap ratio"),
    "fix_single": (float, 0.55, "planted single-speech ratio"),
    # general
    "seed": (int, 0, "master seed"),
    "jobs": (int, 1, "parallel workers for prepare"),
}


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str) -> Any:
        return self.values[key]

    def feature_config(self) -> FeatureConfig:
        try:
            return FeatureConfig(
                hop_s=self["hop_s"],
                window_s=self["window_s"],
                n_fft=self["n_fft"],
                fmin_hz=self["mel_fmin"],
                fmax_hz=self["mel_fmax"],
                log_floor=self["log_floor"],
                segment_s=self["segment_s"],
            )
        except ValueError as exc:
            raise ConfigError(f"invalid feature configuration: {exc}") from exc

    def model_config(self) -> ModelConfig:
        preset = default_config(self["family"], dropout=self["dropout"], seed=self["seed"])
        overrides = {}
        for key in (
            "model_dim",
            "block_count",
            "head_count",
            "ffn_dim",
            "conv_kernel",
            "tcn_resblocks_per_block",
            "hidden_dim",
        ):
            if self[key]:
                overrides[key] = self[key]
        if not overrides:
            return preset
        from dataclasses import replace

        return replace(preset, **overrides)

    def train_config(self) -> TrainConfig:
        explicit = None
        if self["class_weights"]:
            parts = self["class_weights"].split(",")
            if len(parts) != 3:
                raise ConfigError("class_weights must be three comma-separated numbers")
            explicit = tuple(float(p) for p in parts)
        return TrainConfig(
            initial_lr=self["initial_lr"],
            lr_decay=self["lr_decay"],
            early_stop_patience=self["early_stop_patience"],
            max_epochs=self["max_epochs"],
            batch_size=self["batch_size"],
            weights_mode=self["weights_mode"],
            explicit_weights=explicit,
            fallback_weight=self["fallback_weight"] or None,
            seed=self["seed"],
        )

    def augment_policy(self) -> AugmentPolicy | None:
        if self["p_noise"] == 0 and self["p_rir"] == 0:
            return None
        return AugmentPolicy(
            p_noise=self["p_noise"],
            p_rir=self["p_rir"],
            snr_range=(self["snr_lo"], self["snr_hi"]),
            noise_manifest=self["noise_manifest"] or None,
            rir_manifest=self["rir_manifest"] or None,
            seed=self["seed"],
        )

    def cache_dir(self) -> Path:
        return Path(os.environ.get("OSD_CACHE_DIR") or self["cache_dir"])


def _coerce(key: str, raw: str) -> Any:
    ctor, _, _ = SCHEMA[key]
    try:
        if ctor is bool:
            return _parse_bool(raw)
        return ctor(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} ({exc})") from exc


def parse_config_file(path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected KEY=VALUE")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def build_run_config(
    config_path=None,
    set_overrides: list[str] | None = None,
    *,
    seed: int | None = None,
    jobs: int | None = None,
) -> RunConfig:
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    if config_path:
        values.update(parse_config_file(config_path))
    for item in set_overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"--set: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    if seed is not None:
        values["seed"] = seed
    if jobs is not None:
        values["jobs"] = jobs
    return RunConfig(values)
