"""Fixed Laplacian edge detection realized as a frozen convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation

# 4-neighborhood Laplacian stencil; entries sum to zero, never trained.
LAPLACIAN_STENCIL = np.array([[0.0, 1.0, 0.0],
                              [1.0, -4.0, 1.0],
                              [0.0, 1.0, 0.0]])

# L1 norm of the stencil; bounds |response| for inputs in [0, 1].
_NORMALIZER = 8.0

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class EdgeMap:
    """Normalized second-difference responses, one channel per image."""

    values: Tensor  # 1 x H x W, in [-1, 1]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def laplacian_kernel() -> Tensor:
    """The frozen 1x1x3x3 stencil as a non-trainable tensor."""
    return Tensor(LAPLACIAN_STENCIL.reshape(1, 1, 3, 3))


def to_grayscale(image) -> np.ndarray:
    """Luma-weighted channel reduction: 3xHxW in [0,1] -> 1xHxW.

    Also accepts a batch Nx3xHxW, returning Nx1xHxW.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    batched = arr.ndim == 4
    if not batched:
        arr = arr[None]
    if arr.shape[1] != 3:
        raise ContractViolation(f"to_grayscale expects 3 channels, got shape {arr.shape}")
    gray = np.einsum("nchw,c->nhw", arr, _LUMA)[:, None]
    return gray if batched else gray[0]


def laplacian_edge_map(gray) -> EdgeMap:
    """Apply the frozen stencil (zero padding 1) and normalize into [-1, 1]."""
    arr = gray.data if isinstance(gray, Tensor) else np.asarray(gray, dtype=np.float64)
    batched = arr.ndim == 4
    if not batched:
        arr = arr[None]
    out = ad.conv2d(Tensor(arr), laplacian_kernel(), Tensor(np.zeros(1)),
                    stride=1, padding=1)
    values = out.data / _NORMALIZER
    return EdgeMap(values=Tensor(values if batched else values[0]))


def edge_map_batch(images: np.ndarray) -> np.ndarray:
    """Edge maps for a batch of Nx3xHxW images, as a plain Nx1xHxW array."""
    return laplacian_edge_map(to_grayscale(images)).values.data
