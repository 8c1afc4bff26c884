"""Binary PGM (P5, maxval 255) export for masks and image renders."""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def write_pgm(values: np.ndarray, path) -> None:
    """Write a 2-D uint8-representable array as binary PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise FormatError(f"PGM export needs a 2-D array, got shape {arr.shape}")
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"not a binary PGM file: {path}")
    w, h = (int(x) for x in parts[1].split())
    if parts[2] != b"255":
        raise FormatError(f"unsupported PGM maxval in {path}")
    payload = parts[3]
    if len(payload) != w * h:
        raise FormatError(f"truncated PGM payload in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def to_gray_render(channel: np.ndarray, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Affine map [lo, hi] -> [0, 255] for visualization."""
    return (np.clip(channel, lo, hi) - lo) / (hi - lo) * 255.0
