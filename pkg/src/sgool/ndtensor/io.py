"""SGTENSOR binary files.

Layout: 8-byte magic ``SGTENSOR``, u8 dtype code (1=f64, 2=f32), u8 rank,
little-endian u32 extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"SGTENSOR"
_CODES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}


def encode(array) -> bytes:
    a = np.asarray(array)
    if a.dtype == np.float32:
        code = 2
    else:
        code, a = 1, a.astype(np.float64)
    if a.ndim > 255:
        raise FormatError("rank above 255 is not representable")
    header = MAGIC + struct.pack("<BB", code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype=_CODES[code]).tobytes()


def decode(blob: bytes) -> np.ndarray:
    if len(blob) < 10 or blob[:8] != MAGIC:
        raise FormatError("missing SGTENSOR magic")
    code, rank = struct.unpack_from("<BB", blob, 8)
    if code not in _CODES:
        raise FormatError(f"unknown dtype code {code}")
    off = 10 + 4 * rank
    if len(blob) < off:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, 10)
    dtype = _CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - off != count * dtype.itemsize:
        raise FormatError(f"payload holds {len(blob) - off} bytes, expected {count * dtype.itemsize}")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape).astype(dtype.newbyteorder("="))


def save(path, array) -> None:
    Path(path).write_bytes(encode(array))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
