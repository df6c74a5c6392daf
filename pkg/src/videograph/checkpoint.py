"""Checkpoint persistence: manifest.json plus weights.bin in one directory.

The manifest carries the format version, a verbatim config snapshot, ordered
parameter records {name, shape, offset}, matching records for optimizer
velocities, the optimizer epoch, and a crc32 of the payload. The payload is
the concatenation of every recorded array as little-endian float32 in
manifest order (parameters first, then velocities, then named buffers such
as batch-norm running statistics).
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import MODEL_TYPES, VideoGraphConfig, model_type_name
from .optim import SgdMomentum

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint."""


def _records(arrays: dict[str, np.ndarray], offset: int) -> tuple[list[dict], bytes, int]:
    recs, chunks = [], []
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        recs.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    return recs, b"".join(chunks), offset


def _buffer_arrays(model) -> dict[str, np.ndarray]:
    buffers = {}
    for name, bn in model.bn_states().items():
        buffers[f"{name}.running_mean"] = bn.running_mean
        buffers[f"{name}.running_var"] = bn.running_var
    return buffers


def save_checkpoint(model, optimizer: SgdMomentum, epoch: int, path,
                    config_snapshot: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = {name: p.data for name, p in model.named_parameters().items()}
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"refusing to checkpoint non-finite parameter {name!r}")

    param_recs, param_blob, offset = _records(params, 0)
    vel_recs, vel_blob, offset = _records(optimizer.velocity, offset)
    buf_recs, buf_blob, offset = _records(_buffer_arrays(model), offset)
    payload = param_blob + vel_blob + buf_blob

    manifest = {
        "format_version": FORMAT_VERSION,
        "model_type": model_type_name(model),
        "config": config_snapshot if config_snapshot is not None else model.config.to_dict(),
        "epoch": int(epoch),
        "bn_initialized": all(bn.initialized for bn in model.bn_states().values()),
        "params": param_recs,
        "velocities": vel_recs,
        "buffers": buf_recs,
        "optimizer": {"learning_rate": optimizer.learning_rate,
                      "momentum": optimizer.momentum,
                      "weight_decay": optimizer.weight_decay},
        "crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    (path / WEIGHTS_NAME).write_bytes(payload)
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _read_record(payload: bytes, rec: dict, cursor: int) -> tuple[np.ndarray, int]:
    name, shape, offset = rec["name"], tuple(rec["shape"]), rec["offset"]
    if offset != cursor:
        raise CheckpointError(f"parameter {name!r}: offset {offset} breaks payload contiguity "
                              f"(expected {cursor})")
    nbytes = int(np.prod(shape, dtype=np.int64)) * 4
    if offset + nbytes > len(payload):
        raise CheckpointError(f"parameter {name!r}: record of {nbytes} bytes overruns payload "
                              f"of {len(payload)} bytes")
    arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape, dtype=np.int64)),
                        offset=offset).reshape(shape)
    return arr, offset + nbytes


@dataclass
class LoadedCheckpoint:
    model: object
    optimizer: SgdMomentum
    epoch: int
    config: dict
    model_type: str


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no {MANIFEST_NAME} in {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {manifest.get('format_version')!r}")
    payload = (path / WEIGHTS_NAME).read_bytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if crc != manifest["crc32"]:
        raise CheckpointError(f"payload crc mismatch: stored {manifest['crc32']:#010x}, "
                              f"computed {crc:#010x}")

    model_type = manifest["model_type"]
    if model_type not in MODEL_TYPES:
        raise CheckpointError(f"unknown model type {model_type!r}")
    snapshot = manifest["config"]
    config_fields = {f: snapshot[f] for f in VideoGraphConfig.__dataclass_fields__ if f in snapshot}
    config = VideoGraphConfig(**config_fields)
    # parameters are overwritten below, so build with a data-free init strategy
    build_config = replace(config, init_strategy="random")
    model = MODEL_TYPES[model_type](build_config)
    model.config = config

    params = model.named_parameters()
    cursor = 0
    seen = set()
    for rec in manifest["params"]:
        arr, cursor = _read_record(payload, rec, cursor)
        name = rec["name"]
        if name not in params:
            raise CheckpointError(f"manifest parameter {name!r} does not exist in the model")
        if params[name].data.shape != arr.shape:
            raise CheckpointError(f"parameter {name!r}: manifest shape {arr.shape} does not match "
                                  f"model shape {params[name].data.shape}")
        params[name].data = arr.astype(np.float64)
        seen.add(name)
    missing = set(params) - seen
    if missing:
        raise CheckpointError(f"missing parameter record(s): {sorted(missing)}")

    opt_cfg = manifest.get("optimizer", {})
    optimizer = SgdMomentum(params,
                            learning_rate=opt_cfg.get("learning_rate", 0.1),
                            momentum=opt_cfg.get("momentum", 0.9),
                            weight_decay=opt_cfg.get("weight_decay", 1e-5))
    for rec in manifest["velocities"]:
        arr, cursor = _read_record(payload, rec, cursor)
        name = rec["name"]
        if name not in optimizer.velocity:
            raise CheckpointError(f"velocity record {name!r} does not match any trainable parameter")
        optimizer.velocity[name] = arr.astype(np.float64)

    buffers = _buffer_arrays(model)
    for rec in manifest.get("buffers", []):
        arr, cursor = _read_record(payload, rec, cursor)
        name = rec["name"]
        if name not in buffers:
            raise CheckpointError(f"buffer record {name!r} does not exist in the model")
        buffers[name][...] = arr.astype(np.float64)
    if cursor != len(payload):
        raise CheckpointError(f"payload has {len(payload) - cursor} trailing bytes")

    if manifest.get("bn_initialized", False):
        for bn in model.bn_states().values():
            bn.initialized = True
    return LoadedCheckpoint(model=model, optimizer=optimizer, epoch=manifest["epoch"],
                            config=snapshot, model_type=model_type)
