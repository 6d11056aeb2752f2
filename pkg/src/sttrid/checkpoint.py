"""Binary checkpoint archive.

Layout::

    8 bytes   magic  b"STTRCKPT"
    4 bytes   format version (little-endian uint32)
    8 bytes   header length N (little-endian uint64)
    N bytes   UTF-8 JSON header: phase, model config, fused-feature order,
              optimizer settings, metadata and an entry table
              ``[{"name", "shape", "offset"}]`` (offsets in float64 elements)
    rest      every entry's values as little-endian float64, row-major

Entries cover parameters, normalization buffers and, under ``optim/``, the
optimizer moment buffers.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import CONCAT_ORDER, IdentityModel, ModelConfig, build_model
from .numerics import OptimizerState

MAGIC = b"STTRCKPT"
VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Structurally invalid or truncated checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


def encode_checkpoint(model: IdentityModel, optimizer: OptimizerState | None = None, metadata: dict | None = None) -> bytes:
    arrays = dict(model.state_dict())
    opt = None
    if optimizer is not None:
        opt = {k: v for k, v in asdict(optimizer).items() if k != "buffers"}
        arrays.update({f"optim/{k}": v for k, v in optimizer.buffers.items()})
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = {
        "phase": model.phase,
        "model_config": model.config.to_dict(),
        "concat_order": list(CONCAT_ORDER),
        "optimizer": opt,
        "metadata": metadata or {},
        "entries": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)


def checkpoint_save(model: IdentityModel, path, optimizer: OptimizerState | None = None,
                    metadata: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, optimizer, metadata))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Header and name → array mapping, validated against truncation."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: truncated preamble")
    magic, version, n = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {VERSION}")
    start = _PREAMBLE.size
    if len(raw) < start + n:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    values = np.frombuffer(raw, dtype="<f8", offset=start + n) if len(raw) > start + n else np.zeros(0)
    if (len(raw) - start - n) % 8:
        raise CheckpointError(f"{path}: truncated data section")
    arrays = {}
    for entry in header["entries"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        lo = entry["offset"]
        if lo + size > values.size:
            raise CheckpointError(f"{path}: truncated data for {entry['name']!r}")
        arrays[entry["name"]] = values[lo:lo + size].reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def checkpoint_load(path, with_optimizer: bool = False):
    """Rebuild the model (and optionally its optimizer state) from ``path``."""
    header, arrays = read_checkpoint(path)
    if tuple(header.get("concat_order", CONCAT_ORDER)) != CONCAT_ORDER:
        raise CheckpointError(f"{path}: unsupported fused-feature order {header['concat_order']}")
    model = build_model(ModelConfig.from_dict(header["model_config"]), header["phase"])
    try:
        model.load_state_dict(arrays)
    except KeyError as exc:
        raise CheckpointError(f"{path}: {exc.args[0]}") from None
    if not with_optimizer:
        return model
    opt = None
    if header.get("optimizer"):
        opt = OptimizerState(**header["optimizer"])
        opt.buffers = {k[len("optim/"):]: v.copy() for k, v in arrays.items() if k.startswith("optim/")}
    return model, opt
