"""Per-region keep/discard mask generator trained with Gumbel-Softmax.

The generator reads an edge map, aggregates local structure with a 3x3
convolution, emits two-way logits per pixel with a 1x1 convolution, and
mean-pools the logits over each r x r region. During training the
discrete decision is relaxed by Gumbel-Softmax sampling at temperature
tau; at inference the decision is the plain argmax. Channel 1 is "keep".
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation, NumericError

_U_CLAMP = 1e-12  # uniform draws clamped to [eps, 1-eps] before the double log


def count_generator_params(embed_dim: int) -> int:
    """Trainable parameter count: 3x3 conv 1->D with bias, 1x1 conv D->2 with bias."""
    return 9 * embed_dim + embed_dim + 2 * embed_dim + 2


@dataclass
class MaskGeneratorParams:
    """Trainable weights of the convergence and policy convolutions."""

    fc_kernel: Tensor   # D x 1 x 3 x 3
    fc_bias: Tensor     # D
    fp_kernel: Tensor   # 2 x D x 1 x 1
    fp_bias: Tensor     # 2
    region_size: int
    embed_dim: int

    @classmethod
    def create(cls, embed_dim: int, region_size: int, seed: int) -> "MaskGeneratorParams":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        fc = rng.normal(0.0, np.sqrt(2.0 / 9.0), size=(embed_dim, 1, 3, 3))
        fp = rng.normal(0.0, np.sqrt(2.0 / embed_dim), size=(2, embed_dim, 1, 1))
        return cls(
            fc_kernel=Tensor(fc, requires_grad=True),
            fc_bias=Tensor(np.zeros(embed_dim), requires_grad=True),
            fp_kernel=Tensor(fp, requires_grad=True),
            fp_bias=Tensor(np.zeros(2), requires_grad=True),
            region_size=region_size,
            embed_dim=embed_dim,
        )

    def trainable(self) -> list[Tensor]:
        return [self.fc_kernel, self.fc_bias, self.fp_kernel, self.fp_bias]


@dataclass(frozen=True)
class GumbelSchedule:
    """Temperature state: tau after e epochs is tau0 * gamma^e exactly."""

    tau: float = 5.0
    tau0: float = 5.0
    gamma: float = 0.98

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ContractViolation(f"temperature must be > 0, got {self.tau}")


def anneal(schedule: GumbelSchedule) -> GumbelSchedule:
    """One per-epoch decay: tau' = gamma * tau."""
    return replace(schedule, tau=schedule.gamma * schedule.tau)


def region_logits_batch(edge: Tensor, params: MaskGeneratorParams) -> Tensor:
    """Nx1xHxW edge maps -> Nx2xGhxGw keep/discard logits.

    Computes relu(conv3x3(edge)) -> 1x1 conv -> per-region mean. The
    policy convolution is linear, so it is applied after the region mean
    here; the result is identical to pooling its per-pixel output, while
    never materializing the two-channel pixel map.
    """
    if edge.data.ndim != 4 or edge.shape[1] != 1:
        raise ContractViolation(f"expected Nx1xHxW edge maps, got {edge.shape}")
    n, _, h, w = edge.shape
    r = params.region_size
    if h % r or w % r:
        raise ContractViolation(
            f"image {h}x{w} is not divisible by region size r={r}")
    gh, gw = h // r, w // r
    d = params.embed_dim
    fc_k, fc_b = params.fc_kernel, params.fc_bias
    fp_k, fp_b = params.fp_kernel, params.fp_bias

    cols = ad._im2col(edge.data, 3, 1, 1).reshape(9, n * h * w)
    hid = fc_k.data.reshape(d, 9) @ cols                      # d, n*h*w
    hid += fc_b.data[:, None]
    np.maximum(hid, 0.0, out=hid)
    pooled = hid.reshape(d, n, gh, r, gw, r).mean(axis=(3, 5))
    pooled_mat = pooled.reshape(d, n * gh * gw)
    out = fp_k.data.reshape(2, d) @ pooled_mat                # 2, n*gh*gw
    out += fp_b.data[:, None]
    out = out.reshape(2, n, gh, gw).transpose(1, 0, 2, 3).copy()

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(2, n * gh * gw)
        if fp_b.requires_grad:
            fp_b._accumulate(gm.sum(axis=1))
        if fp_k.requires_grad:
            fp_k._accumulate((gm @ pooled_mat.T).reshape(2, d, 1, 1))
        dpool = fp_k.data.reshape(2, d).T @ gm                # d, n*gh*gw
        dhid = np.broadcast_to(
            dpool.reshape(d, n, gh, 1, gw, 1) / (r * r),
            (d, n, gh, r, gw, r)).reshape(d, n * h * w).copy()
        dhid *= hid > 0.0
        if fc_b.requires_grad:
            fc_b._accumulate(dhid.sum(axis=1))
        if fc_k.requires_grad:
            fc_k._accumulate((dhid @ cols.T).reshape(d, 1, 3, 3))
        if edge.requires_grad or edge._parents:
            dcols = (fc_k.data.reshape(d, 9).T @ dhid).reshape(3, 3, n, h, w)
            dxp = np.zeros((n, h + 2, w + 2))
            for dy in range(3):
                for dx in range(3):
                    dxp[:, dy:dy + h, dx:dx + w] += dcols[dy, dx]
            edge._accumulate(dxp[None, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))

    return ad._make(out, (edge, fc_k, fc_b, fp_k, fp_b), "region_logits", backward)


def region_logits(edge, params: MaskGeneratorParams) -> Tensor:
    """Single-image form: 1xHxW edge map -> GhxGwx2 logits."""
    values = edge.values if hasattr(edge, "values") else edge
    vt = values if isinstance(values, Tensor) else Tensor(values)
    out = region_logits_batch(ad.reshape(vt, (1,) + tuple(vt.shape)), params)
    gh, gw = out.shape[2], out.shape[3]
    return ad.moveaxis(ad.reshape(out, (2, gh, gw)), 0, 2)


def gumbel_noise(shape, seed: int, epoch: int = 0, step: int = 0) -> np.ndarray:
    """Counter-based standard Gumbel draws, keyed by (seed, epoch, step).

    Region index is the position within the returned array, so parallel
    and serial consumers see identical noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, epoch, step)))
    u = np.clip(rng.uniform(size=shape), _U_CLAMP, 1.0 - _U_CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, schedule: GumbelSchedule, noise: np.ndarray,
                          axis: int = -1) -> Tensor:
    """softmax((logits + noise) / tau) along ``axis``; differentiable in logits."""
    lt = logits if isinstance(logits, Tensor) else Tensor(logits)
    if noise.shape != lt.shape:
        raise ContractViolation(
            f"noise shape {noise.shape} does not match logits {lt.shape}")
    shifted = ad.add(lt, Tensor(noise))
    return ad.softmax(shifted, axis=axis, temperature=schedule.tau)


def inference_decision(logits) -> np.ndarray:
    """Hard argmax over the trailing pair: 1 iff keep-logit > discard-logit.

    Exact ties resolve to 0 (discard, preserving the raw image).
    Accepts any array whose last axis has extent 2.
    """
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise ContractViolation(f"expected trailing pair of logits, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite logits in inference_decision")
    return (arr[..., 1] > arr[..., 0]).astype(np.float64)


def dilate(region, r: int) -> Tensor:
    """Replicate a GhxGw region map to pixel resolution 1x(Gh*r)x(Gw*r).

    Works identically for soft and hard maps; each output pixel's
    gradient flows back to its source region cell. A batched Nx1xGhxGw
    input yields Nx1xHxW.
    """
    rt = region if isinstance(region, Tensor) else Tensor(region)
    if rt.data.ndim == 2:
        out = ad.upsample_nearest(ad.reshape(rt, (1, 1) + tuple(rt.shape)), r)
        return ad.reshape(out, out.shape[1:])
    return ad.upsample_nearest(rt, r)
