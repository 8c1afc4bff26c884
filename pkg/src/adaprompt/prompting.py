"""Learnable frame prompt template and masked prompt application."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _make
from .errors import ContractViolation


def frame_support(h: int, w: int, width: int) -> np.ndarray:
    """Binary 1xHxW map: 1 on the border frame of single-side width ``width``."""
    if width < 0:
        raise ContractViolation(f"frame width must be >= 0, got {width}")
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    border = np.minimum(np.minimum(ii, jj), np.minimum(h - 1 - ii, w - 1 - jj))
    return (border < width).astype(np.float64)[None]


def count_prompt_params(h: int, w: int, width: int) -> int:
    return 3 * int(frame_support(h, w, width).sum())


@dataclass
class PromptTemplate:
    """Image-sized trainable values gated by a fixed frame support."""

    values: Tensor          # 3 x H x W, trainable
    support: np.ndarray     # 1 x H x W, fixed binary frame
    width: int

    @classmethod
    def create(cls, h: int, w: int, width: int, seed: int) -> "PromptTemplate":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        values = Tensor(rng.normal(0.0, 0.03, size=(3, h, w)), requires_grad=True)
        return cls(values=values, support=frame_support(h, w, width), width=width)


def apply_prompt(x, template: PromptTemplate, mask) -> Tensor:
    """x + P * support * mask, elementwise over the image.

    ``x`` is 3xHxW (or a batch Nx3xHxW with a per-sample Nx1xHxW mask);
    the template is shared across the batch. Gradient flows to the
    template values (through support and mask) and to the mask (through
    the template values); the raw image receives identity gradient.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    mt = mask if isinstance(mask, Tensor) else Tensor(mask)
    batched = xt.data.ndim == 4
    xd = xt.data if batched else xt.data[None]
    md = mt.data if batched else mt.data[None]
    n = xd.shape[0]
    if xd.shape[1:] != template.values.shape or md.shape != (n, 1) + xd.shape[2:]:
        raise ContractViolation(
            f"apply_prompt shape mismatch: image {xt.shape}, "
            f"template {template.values.shape}, mask {mt.shape}")

    p = template.values
    gate = template.support * md                     # n,1,H,W
    out = xd + p.data[None] * gate

    def backward(g):
        gb = g if batched else g[None]
        if p.requires_grad:
            p._accumulate((gb * gate).sum(axis=0))
        if mt.requires_grad or mt._parents:
            dm = (gb * (p.data * template.support)[None]).sum(axis=1, keepdims=True)
            mt._accumulate(dm if batched else dm[0])
        if xt.requires_grad or xt._parents:
            xt._accumulate(g)

    return _make(out if batched else out[0], (xt, p, mt), "apply_prompt", backward)
