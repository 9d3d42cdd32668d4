"""Binary tensor dumps: the on-disk format for checkpoints and fixtures.

Layout (little-endian): magic ``MSTF``, version u32, rank u32, extents
u64[rank], dtype u8 (0 = float32, 1 = float64), then raw row-major data.
"""
from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"MSTF"
VERSION = 1
_DTYPE_CODES = {0: "<f4", 1: "<f8"}
_CODES_BY_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class DumpFormatError(ValueError):
    """Corrupt or unsupported tensor dump."""


def write_tensor(fh, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _CODES_BY_KIND:
        raise DumpFormatError(f"unsupported dtype {arr.dtype}; dumps hold float32/float64")
    code = _CODES_BY_KIND[arr.dtype]
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(struct.pack("<B", code))
    fh.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise DumpFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, rank = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise DumpFormatError(f"unsupported dump version {version}")
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    (code,) = struct.unpack("<B", fh.read(1))
    if code not in _DTYPE_CODES:
        raise DumpFormatError(f"unknown dtype code {code}")
    dt = np.dtype(_DTYPE_CODES[code])
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise DumpFormatError("truncated tensor dump")
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def save_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def dump_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()
