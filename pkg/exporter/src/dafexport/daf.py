"""DAF1 feature-file writer/reader.

Implements the engine's documented wire format directly (the byte layout
is the interface contract between exporter and engine):

    0   4  magic "DAF1"
    4   2  version (u16) = 1
    6   2  dtype (u16): 0 = float64, 1 = float32
    8   4  d (u32)
    12  4  h (u32)
    16  4  w (u32)
    20  .  d*h*w little-endian values, channel-major
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DAF1"
VERSION = 1
_HEADER = struct.Struct("<4sHHIII")
_DTYPES = {"f64": (0, np.dtype("<f8")), "f32": (1, np.dtype("<f4"))}


def write_daf(path, values: np.ndarray, dtype: str = "f32") -> None:
    """Write a (d, h, w) array; overwrites atomically via a temp file."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    arr = np.asarray(values)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"need a non-empty (d, h, w) array, got shape {arr.shape}")
    code, np_dtype = _DTYPES[dtype]
    d, h, w = arr.shape
    blob = (_HEADER.pack(MAGIC, VERSION, code, d, h, w)
            + np.ascontiguousarray(arr, dtype=np_dtype).tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    import os
    os.replace(tmp, path)


def read_daf(path) -> np.ndarray:
    """Read a DAF1 file into a float64 (d, h, w) array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: too short for a header")
    magic, version, code, d, h, w = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a DAF1 v{VERSION} file")
    np_dtype = {0: np.dtype("<f8"), 1: np.dtype("<f4")}.get(code)
    if np_dtype is None:
        raise ValueError(f"{path}: unknown dtype code {code}")
    expected = d * h * w * np_dtype.itemsize
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np_dtype).astype(np.float64).reshape(d, h, w)
