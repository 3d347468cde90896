"""DAF1 feature-file format.

Fixed little-endian layout, bit-exact round trip for 64-bit payloads:

    offset  size  field
    0       4     magic "DAF1"
    4       2     version (u16, currently 1)
    6       2     dtype code (u16): 0 = float64, 1 = float32
    8       4     d (u32, channels)
    12      4     h (u32, rows)
    16      4     w (u32, cols)
    20      -     payload: d*h*w values, channel-major (c, row, col)

32-bit payloads are widened to float64 on read.  Parsing errors carry the
byte offset at which the file stopped making sense.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import DescriptorField
from .errors import DomainError, FormatError

MAGIC = b"DAF1"
VERSION = 1
_HEADER = struct.Struct("<4sHHIII")
DTYPE_FLOAT64 = 0
DTYPE_FLOAT32 = 1
_PAYLOAD_DTYPES = {DTYPE_FLOAT64: np.dtype("<f8"), DTYPE_FLOAT32: np.dtype("<f4")}


def read_feature_file(path) -> DescriptorField:
    """Parse one DAF1 file into a DescriptorField."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for a header ({len(blob)} bytes)",
                          offset=len(blob))
    magic, version, dtype_code, d, h, w = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype_code not in _PAYLOAD_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=6)
    for off, name, dim in ((8, "d", d), (12, "h", h), (16, "w", w)):
        if dim == 0:
            raise FormatError(f"dimension {name} is zero", offset=off)
    dtype = _PAYLOAD_DTYPES[dtype_code]
    expected = d * h * w
    payload = blob[_HEADER.size:]
    got, rem = divmod(len(payload), dtype.itemsize)
    if rem or got < expected:
        raise FormatError(
            f"truncated payload: expected {expected} values "
            f"({expected * dtype.itemsize} bytes), got {len(payload)} bytes",
            offset=_HEADER.size + len(payload))
    if got > expected:
        raise FormatError(
            f"{len(payload) - expected * dtype.itemsize} trailing bytes after payload",
            offset=_HEADER.size + expected * dtype.itemsize)
    values = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(d, h, w)
    return DescriptorField(values)


def read_feature_header(path) -> dict:
    """Parse and validate only the header; returns its fields."""
    with open(path, "rb") as fh:
        blob = fh.read(_HEADER.size)
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for a header ({len(blob)} bytes)",
                          offset=len(blob))
    magic, version, dtype_code, d, h, w = _HEADER.unpack(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype_code not in _PAYLOAD_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code}", offset=6)
    for off, name, dim in ((8, "d", d), (12, "h", h), (16, "w", w)):
        if dim == 0:
            raise FormatError(f"dimension {name} is zero", offset=off)
    return {"magic": magic.decode("ascii"), "version": version,
            "dtype": "float64" if dtype_code == DTYPE_FLOAT64 else "float32",
            "d": d, "h": h, "w": w}


def write_feature_file(path, field: DescriptorField,
                       dtype_code: int = DTYPE_FLOAT64) -> None:
    """Write a DescriptorField in the layout above; overwrites in place."""
    if dtype_code not in _PAYLOAD_DTYPES:
        raise DomainError(f"unknown dtype code {dtype_code}")
    header = _HEADER.pack(MAGIC, VERSION, dtype_code, field.d, field.h, field.w)
    payload = np.ascontiguousarray(field.values, dtype=_PAYLOAD_DTYPES[dtype_code])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())
