"""Portable binary tensor file ("ATSR") read/write.

Layout: magic "ATSR", uint32 LE version (= 1), 1-byte dtype tag
(0 = little-endian IEEE754 double), uint32 LE rank, rank x uint64 LE
extents, then the row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ATSR"
VERSION = 1
_DTYPE_F64 = 0


def write_tensor(t, path) -> None:
    arr = np.ascontiguousarray(getattr(t, "data", t), dtype=np.float64)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBI", VERSION, _DTYPE_F64, arr.ndim))
        for extent in arr.shape:
            f.write(struct.pack("<Q", extent))
        f.write(arr.astype("<f8").tobytes())


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what} at offset {f.tell() - len(data)}")
    return data


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0 in {path}")
        version, dtype, rank = struct.unpack("<IBI", _read_exact(f, 9, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version} at offset 4")
        if dtype != _DTYPE_F64:
            raise FormatError(f"unsupported dtype tag {dtype} at offset 8")
        shape = tuple(struct.unpack("<Q", _read_exact(f, 8, "extent"))[0]
                      for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload_offset = f.tell()
        payload = f.read()
    if len(payload) != 8 * count:
        raise FormatError(
            f"payload length {len(payload)} at offset {payload_offset} "
            f"disagrees with extents {shape}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def dataset_paths(directory) -> dict[str, Path]:
    d = Path(directory)
    return {
        "images": d / "images.atsr",
        "labels": d / "labels.atsr",
        "boxes": d / "boxes.atsr",
        "meta": d / "meta.json",
    }
