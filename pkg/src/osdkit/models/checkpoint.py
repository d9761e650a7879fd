"""Versioned checkpoint files: text header plus a flat parameter blob.

Layout (ascii header, one field per line, '---' separator, raw bytes):

    osdkit-checkpoint v1
    model_digest=<12-hex digest of the architecture config>
    feature_digest=<digest of the feature config the model was trained on>
    cfg.family='CF'
    ...one cfg.<field> line per ModelConfig field...
    meta.<key>=<value>           (optional free-form entries)
    tensor=<state_dict name> <dtype> <d0xd1x...> <byte offset>
    blob_bytes=<N>
    ---
    <N bytes of little-endian tensor data in table order>

Loading rebuilds the architecture from the cfg lines, refuses files whose
version or digest does not match, and restores every state_dict entry
(including batch-norm running statistics).
"""

from __future__ import annotations

import ast
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, DataError
from .zoo import ModelConfig, build_model

_MAGIC = "osdkit-checkpoint v1"

_DTYPE_TO_TAG = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.int64: "i64",
    torch.uint8: "u8",
}
_TAG_TO_NP = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "u8": "|u1"}
_TAG_TO_TORCH = {
    "f32": torch.float32,
    "f64": torch.float64,
    "i64": torch.int64,
    "u8": torch.uint8,
}


def save_checkpoint(
    path,
    model: torch.nn.Module,
    config: ModelConfig,
    *,
    feature_digest: str = "",
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [_MAGIC, f"model_digest={config.digest()}", f"feature_digest={feature_digest}"]
    header += [f"cfg.{line}" for line in config.meta_lines()]
    for key, value in (meta or {}).items():
        header.append(f"meta.{key}={value}")
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        tag = _DTYPE_TO_TAG.get(tensor.dtype)
        if tag is None:
            raise ConfigError(f"cannot serialize tensor {name!r} of dtype {tensor.dtype}")
        arr = tensor.detach().cpu().numpy().astype(_TAG_TO_NP[tag])
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        header.append(f"tensor={name} {tag} {shape} {offset}")
        raw = arr.tobytes()
        blobs.append(raw)
        offset += len(raw)
    header.append(f"blob_bytes={offset}")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n---\n").encode("ascii"))
        for raw in blobs:
            f.write(raw)
    return path


def _parse_header(blob: bytes, path: Path):
    sep = blob.find(b"\n---\n")
    if sep < 0:
        raise DataError(f"{path}: missing checkpoint separator")
    lines = blob[:sep].decode("ascii").splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ConfigError(f"{path}: not a {_MAGIC!r} file")
    fields: dict[str, str] = {}
    cfg_fields: dict[str, str] = {}
    meta: dict[str, str] = {}
    tensors = []
    for line in lines[1:]:
        key, value = line.split("=", 1)
        if key == "tensor":
            name, tag, shape, offset = value.split(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
            tensors.append((name, tag, dims, int(offset)))
        elif key.startswith("cfg."):
            cfg_fields[key[4:]] = value
        elif key.startswith("meta."):
            meta[key[5:]] = value
        else:
            fields[key] = value
    return fields, cfg_fields, meta, tensors, blob[sep + 5 :]


def load_checkpoint(path) -> tuple[torch.nn.Module, ModelConfig, dict]:
    """Rebuild the model and restore its state; returns (model, config, meta)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    fields, cfg_fields, meta, tensors, payload = _parse_header(path.read_bytes(), path)
    try:
        kwargs = {name: ast.literal_eval(value) for name, value in cfg_fields.items()}
        config = ModelConfig(**kwargs)
    except (ValueError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"{path}: cannot rebuild model config ({exc})") from exc
    if config.digest() != fields.get("model_digest", ""):
        raise ConfigError(
            f"{path}: stored model_digest {fields.get('model_digest')!r} does not "
            f"match the rebuilt config digest {config.digest()!r}"
        )
    if len(payload) != int(fields.get("blob_bytes", -1)):
        raise DataError(f"{path}: parameter blob is truncated")
    model = build_model(config)
    state = {}
    for name, tag, dims, offset in tensors:
        arr = np.frombuffer(
            payload, dtype=_TAG_TO_NP[tag], count=int(np.prod(dims, dtype=np.int64)) if dims else 1, offset=offset
        ).reshape(dims)
        state[name] = torch.from_numpy(arr.copy()).to(_TAG_TO_TORCH[tag])
    model.load_state_dict(state)
    meta["feature_digest"] = fields.get("feature_digest", "")
    return model.eval(), config, meta
