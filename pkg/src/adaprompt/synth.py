"""Synthetic object-placement benchmark.

Each image carries one class-identifying glyph (a solid shape with a
per-class color) at a random size and position over smooth structured
background noise, together with the glyph's exact bounding box. The
boxes let experiments measure directly whether learned masks avoid
label-bearing pixels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .tensorio import dataset_paths, read_tensor, write_tensor

# RGB-cube corner colors paired one-to-one with the glyph shapes below.
_COLORS = np.array([
    (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0),
    (1, 0, 1), (0, 1, 1), (1, 1, 1), (0, 0, 0),
], dtype=np.float64)

_BG_COARSE = 8  # background noise grid cells per side


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    num_classes: int = 8
    glyph_min: int = 12
    glyph_max: int = 28
    train_samples: int = 2000
    test_samples: int = 500
    noise_amplitude: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.glyph_max > self.image_size:
            raise ConfigError(
                f"glyph_max {self.glyph_max} exceeds image size {self.image_size}")
        if self.glyph_min < 3 or self.glyph_min > self.glyph_max:
            raise ConfigError(f"bad glyph size range [{self.glyph_min}, {self.glyph_max}]")
        if self.num_classes < 1 or self.num_classes > len(_COLORS):
            raise ConfigError(f"num_classes must be in [1, {len(_COLORS)}]")
        if not 0.0 <= self.noise_amplitude <= 0.2:
            raise ConfigError("noise_amplitude must stay in [0, 0.2] to keep the "
                              "glyph margin guarantee")


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray   # 3 x H x W in [0, 1]
    label: int
    box: tuple[int, int, int, int]  # top, left, height, width


def glyph_mask(label: int, s: int) -> np.ndarray:
    """Boolean s x s stencil for the class shape; touches all four box edges."""
    c = (s - 1) / 2.0
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    dy, dx = np.abs(yy - c), np.abs(xx - c)
    shape = label % len(_COLORS)
    if shape == 0:      # solid square
        return np.ones((s, s), dtype=bool)
    if shape == 1:      # disc
        return dy ** 2 + dx ** 2 <= (s / 2.0) ** 2
    if shape == 2:      # diamond
        return dy + dx <= s / 2.0
    if shape == 3:      # plus
        t = max(2, s // 3)
        lo, hi = (s - t) // 2, (s - t) // 2 + t
        bar_v = (xx >= lo) & (xx < hi)
        bar_h = (yy >= lo) & (yy < hi)
        return bar_v | bar_h
    if shape == 4:      # X
        t = max(2, s // 4)
        return (np.abs(yy - xx) < t) | (np.abs(yy + xx - (s - 1)) < t)
    if shape == 5:      # ring
        t = max(2, s // 4)
        outer = dy ** 2 + dx ** 2 <= (s / 2.0) ** 2
        inner = dy ** 2 + dx ** 2 <= (s / 2.0 - t) ** 2
        return outer & ~inner
    if shape == 6:      # triangle, apex on top
        return dx <= (yy + 1) / 2.0
    t = max(2, s // 5)  # hollow frame
    return (yy < t) | (yy >= s - t) | (xx < t) | (xx >= s - t)


def _sample_rng(seed: int, global_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(global_index,)))


def _render(cfg: SynthConfig, global_index: int, label: int) -> SynthSample:
    h = w = cfg.image_size
    rng = _sample_rng(cfg.seed, global_index)
    s = int(rng.integers(cfg.glyph_min, cfg.glyph_max + 1))
    top = int(rng.integers(0, h - s + 1))
    left = int(rng.integers(0, w - s + 1))
    coarse = rng.uniform(-1.0, 1.0, size=(3, _BG_COARSE, _BG_COARSE))
    bg = np.kron(coarse, np.ones((1, (h + _BG_COARSE - 1) // _BG_COARSE,
                                  (w + _BG_COARSE - 1) // _BG_COARSE)))[:, :h, :w]
    image = 0.5 + cfg.noise_amplitude * bg
    mask = glyph_mask(label, s)
    color = _COLORS[label % len(_COLORS)]
    block = image[:, top:top + s, left:left + s]
    image[:, top:top + s, left:left + s] = np.where(mask[None], color[:, None, None], block)
    return SynthSample(image=image, label=label, box=(top, left, s, s))


def gen_dataset(cfg: SynthConfig, split: str) -> list[SynthSample]:
    """Deterministic sample list for a split; splits use disjoint index ranges."""
    cfg.validate()
    if split == "train":
        offset, n = 0, cfg.train_samples
    elif split == "test":
        offset, n = cfg.train_samples, cfg.test_samples
    else:
        raise ConfigError(f"unknown split {split!r}")
    return [_render(cfg, offset + i, (offset + i) % cfg.num_classes)
            for i in range(n)]


def save_dataset(cfg: SynthConfig, directory) -> None:
    """Write both splits plus metadata in the portable directory layout."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        samples = gen_dataset(cfg, split)
        sub = d / split
        sub.mkdir(exist_ok=True)
        paths = dataset_paths(sub)
        write_tensor(np.stack([s.image for s in samples]), paths["images"])
        write_tensor(np.array([s.label for s in samples], dtype=np.float64),
                     paths["labels"])
        write_tensor(np.array([s.box for s in samples], dtype=np.float64),
                     paths["boxes"])
    (d / "meta.json").write_text(
        json.dumps({k: str(v) for k, v in asdict(cfg).items()}, indent=2))


def load_split(directory, split: str):
    """Return (images NxCxHxW, labels N, boxes Nx4) for a stored split."""
    paths = dataset_paths(Path(directory) / split)
    for key in ("images", "labels", "boxes"):
        if not paths[key].exists():
            raise DataError(f"missing dataset file {paths[key]}")
    images = read_tensor(paths["images"])
    labels = read_tensor(paths["labels"]).astype(np.int64)
    boxes = read_tensor(paths["boxes"]).astype(np.int64)
    return images, labels, boxes


def load_meta(directory) -> SynthConfig:
    raw = json.loads((Path(directory) / "meta.json").read_text())
    fields = SynthConfig.__dataclass_fields__
    unknown = set(raw) - set(fields)
    if unknown:
        raise ConfigError(f"unknown meta keys: {sorted(unknown)}")
    coerced = {k: (float(v) if fields[k].type == "float" else int(v))
               for k, v in raw.items()}
    return SynthConfig(**coerced)


def region_overlap_stats(masks: np.ndarray, boxes: np.ndarray, r: int):
    """Mean mask-on fraction over object vs background regions.

    A region counts as "object" iff its r x r pixel block intersects the
    sample's glyph box. ``masks`` is N x Gh x Gw of hard {0,1} values.
    """
    masks = np.asarray(masks, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.int64)
    n, gh, gw = masks.shape
    ys = np.arange(gh) * r
    xs = np.arange(gw) * r
    obj_vals, bg_vals = [], []
    for i in range(n):
        top, left, bh, bw = boxes[i]
        inter_y = (ys < top + bh) & (ys + r > top)
        inter_x = (xs < left + bw) & (xs + r > left)
        is_obj = inter_y[:, None] & inter_x[None, :]
        obj_vals.append(masks[i][is_obj])
        bg_vals.append(masks[i][~is_obj])
    obj = np.concatenate(obj_vals)
    bg = np.concatenate(bg_vals)
    object_on = float(obj.mean()) if obj.size else 0.0
    background_on = float(bg.mean()) if bg.size else 0.0
    return object_on, background_on
