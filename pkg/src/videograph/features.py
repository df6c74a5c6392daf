"""Bit-exact binary container for per-video segment feature tensors (VGFT).

Layout, all little-endian:
    offset 0   magic b"VGFT"
    offset 4   version  uint16 (currently 1)
    offset 6   T, H, W, C  four uint32
    offset 22  payload  T*H*W*C float32, row-major [T, H, W, C]
    tail       crc32 of the payload bytes, uint32
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"VGFT"
VERSION = 1
_HEADER = struct.Struct("<4sH4I")
_CRC = struct.Struct("<I")


class FeatureFileError(ValueError):
    """Malformed, truncated, or corrupted feature file."""


def write_feature_file(path, features: np.ndarray) -> None:
    """Write a (T, H, W, C) tensor; payload is stored as float32."""
    arr = np.asarray(features)
    if arr.ndim != 4:
        raise ValueError(f"features must be 4-D (T, H, W, C); got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite features")
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, VERSION, *arr.shape)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + _CRC.pack(crc))


def read_feature_file(path) -> np.ndarray:
    """Read a feature file back as a float64 (T, H, W, C) array.

    float32 payload values embed exactly in float64, so a write-read-write
    cycle is byte identical.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size + _CRC.size:
        raise FeatureFileError(f"file too short to hold a header: {len(blob)} bytes")
    magic, version, t, h, w, c = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    if version != VERSION:
        raise FeatureFileError(f"unsupported version {version} (expected {VERSION})")
    expected = t * h * w * c
    actual = (len(blob) - _HEADER.size - _CRC.size) // 4
    if _HEADER.size + expected * 4 + _CRC.size != len(blob):
        raise FeatureFileError(f"payload size mismatch: expected {expected} float32 values, found {actual}")
    payload = blob[_HEADER.size:_HEADER.size + expected * 4]
    (crc_stored,) = _CRC.unpack_from(blob, _HEADER.size + expected * 4)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if crc != crc_stored:
        raise FeatureFileError(f"payload checksum mismatch: stored {crc_stored:#010x}, computed {crc:#010x}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, c).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise FeatureFileError("payload contains non-finite values")
    return arr
