"""Named-tensor checkpoint container ("AVPC").

Layout: magic "AVPC", uint32 LE version (= 1), then per entry:
uint32 LE name length, name bytes (UTF-8), uint32 LE rank,
rank x uint64 LE extents, row-major little-endian float64 payload.
Entries repeat until end of file.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"AVPC"
VERSION = 1


def save_checkpoint(entries: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, value in entries.items():
            arr = np.ascontiguousarray(getattr(value, "data", value), dtype=np.float64)
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(arr.astype("<f8").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what} at offset {f.tell() - len(data)}")
    return data


def load_checkpoint(path) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0 in {path}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version} at offset 4")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError(f"truncated name length at offset {f.tell() - len(head)}")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            shape = tuple(struct.unpack("<Q", _read_exact(f, 8, "extent"))[0]
                          for _ in range(rank))
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            payload = _read_exact(f, 8 * count, f"payload of {name!r}")
            entries[name] = np.frombuffer(payload, dtype="<f8").astype(
                np.float64).reshape(shape)
    return entries
