"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every value is double precision. Gradients accumulate until cleared by
the optimizer step. The graph is built eagerly by the op functions below
and walked once, in reverse topological order, by ``Tensor.backward``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericError


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op=""):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def check_finite(self, context: str = "") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in tensor {context or self._op!r}")

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            self.grad = self.grad.reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor that wants one."""
        if self.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; all strict same-shape (or python-scalar) arithmetic.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, op, backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                 _parents=[p for p in parents if p.requires_grad or p._parents],
                 _op=op)
    if out.requires_grad or out._parents:
        out._backward = backward
    return out


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        out = _make(a.data + float(b), (a,), "add_const",
                    lambda g: a._accumulate(g))
        return out
    if a.shape != b.shape:
        raise ContractViolation(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), "add", backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        c = float(b)
        return _make(a.data * c, (a,), "mul_const",
                     lambda g: a._accumulate(g * c))
    if a.shape != b.shape:
        raise ContractViolation(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), "mul", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _make(np.where(mask, x.data, 0.0), (x,), "relu",
                 lambda g: x._accumulate(g * mask))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), "exp", lambda g: x._accumulate(g * y))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), "log",
                 lambda g: x._accumulate(g / x.data))


def tsum(x: Tensor, axis=None) -> Tensor:
    y = np.sum(x.data, axis=axis, keepdims=False)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy())
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _make(y, (x,), "sum", backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), "reshape",
                 lambda g: x._accumulate(g.reshape(x.shape)))


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    return _make(np.moveaxis(x.data, src, dst).copy(), (x,), "moveaxis",
                 lambda g: x._accumulate(np.moveaxis(g, dst, src)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def softmax(x: Tensor, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Numerically stabilized softmax of ``x / temperature`` along ``axis``."""
    if not temperature > 0.0:
        raise ContractViolation(f"softmax temperature must be > 0, got {temperature}")
    z = x.data / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        x._accumulate((g - inner) * y / temperature)

    return _make(y, (x,), "softmax", backward)


def _out_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Patch matrix in (c, k, k, n, ho, wo) layout, ready for one flat GEMM."""
    n, c, h, w = x.shape
    ho, wo = _out_hw(h, w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))).transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, ho, wo), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy:dy + stride * ho:stride,
                                 dx:dx + stride * wo:stride]
    return cols


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, NCHW layout.

    Output spatial extent is floor((H + 2p - k) / stride) + 1.
    """
    n, cin, h, w = x.shape
    cout, cink, kh, kw = kernel.shape
    if kh != kw:
        raise ContractViolation(f"square kernels only, got {kernel.shape}")
    k = kh
    if cink != cin:
        raise ContractViolation(
            f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (cout,):
        raise ContractViolation(
            f"conv2d bias shape {bias.shape} does not match kernel {kernel.shape}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ContractViolation(
            f"conv2d input {h}x{w} too small for kernel {k} with padding {padding}")
    ho, wo = _out_hw(h, w, k, stride, padding)

    cols = _im2col(x.data, k, stride, padding)          # cin,k,k,n,ho,wo
    cols_mat = cols.reshape(cin * k * k, n * ho * wo)
    w_mat = kernel.data.reshape(cout, cin * k * k)
    out = (w_mat @ cols_mat).reshape(cout, n, ho, wo).transpose(1, 0, 2, 3).copy()
    out += bias.data[None, :, None, None]

    def backward(g):
        g_mat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(
            cout, n * ho * wo)
        if kernel.requires_grad:
            kernel._accumulate((g_mat @ cols_mat.T).reshape(kernel.shape))
        if bias.requires_grad:
            bias._accumulate(g_mat.sum(axis=1))
        if x.requires_grad or x._parents:
            dcols = (w_mat.T @ g_mat).reshape(cin, k, k, n, ho, wo)
            dxp = np.zeros((cin, n, h + 2 * padding, w + 2 * padding))
            for dy in range(k):
                for dx in range(k):
                    dxp[:, :, dy:dy + stride * ho:stride,
                        dx:dx + stride * wo:stride] += dcols[:, dy, dx]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp.transpose(1, 0, 2, 3))

    return _make(out, (x, kernel, bias), "conv2d", backward)


def block_mean(x: Tensor, r: int) -> Tensor:
    """Average-pool NCHW over non-overlapping r x r blocks."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ContractViolation(f"block_mean: {h}x{w} not divisible by r={r}")
    gh, gw = h // r, w // r
    y = x.data.reshape(n, c, gh, r, gw, r).mean(axis=(3, 5))

    def backward(g):
        gx = np.broadcast_to(g[:, :, :, None, :, None] / (r * r),
                             (n, c, gh, r, gw, r))
        x._accumulate(gx.reshape(n, c, h, w).copy())

    return _make(y, (x,), "block_mean", backward)


def upsample_nearest(x: Tensor, r: int) -> Tensor:
    """Replicate each NCHW cell into an r x r block (the dilation map)."""
    n, c, h, w = x.shape
    y = np.broadcast_to(x.data[:, :, :, None, :, None],
                        (n, c, h, r, w, r)).reshape(n, c, h * r, w * r)

    def backward(g):
        x._accumulate(g.reshape(n, c, h, r, w, r).sum(axis=(3, 5)))

    return _make(y.copy(), (x,), "upsample_nearest", backward)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: NCHW -> NC."""
    n, c, h, w = x.shape
    y = x.data.mean(axis=(2, 3))

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy())

    return _make(y, (x,), "spatial_mean", backward)


def cross_entropy(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows of an N x K score matrix."""
    s = scores.data
    if s.ndim == 1:
        s = s[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = s.shape
    if labels.shape != (n,):
        raise ContractViolation(f"labels shape {labels.shape} vs scores {s.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractViolation(f"label out of range [0, {k})")
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    loss = float(np.mean(lse - s[np.arange(n), labels]))
    probs = np.exp(s - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        d *= float(np.asarray(g).reshape(-1)[0]) / n
        scores._accumulate(d.reshape(scores.shape))

    return _make(np.float64(loss), (scores,), "cross_entropy", backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of extent ``length`` along ``axis``."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        x._accumulate(gx)

    return _make(x.data[idx].copy(), (x,), "narrow", backward)


def straight_through_hard(soft: Tensor, axis: int) -> Tensor:
    """One-hot argmax forward, identity backward."""
    idx = np.argmax(soft.data, axis=axis)
    hard = np.zeros_like(soft.data)
    np.put_along_axis(hard, np.expand_dims(idx, axis), 1.0, axis=axis)
    return _make(hard, (soft,), "straight_through",
                 lambda g: soft._accumulate(g))


# ---------------------------------------------------------------------------
# Optimizer: plain gradient descent with a cosine-decayed learning rate.
# ---------------------------------------------------------------------------

@dataclass
class ParamGroup:
    params: list[Tensor]
    base_lr: float

    def __post_init__(self):
        if not self.base_lr > 0.0:
            raise ContractViolation(f"base_lr must be > 0, got {self.base_lr}")


@dataclass
class SgdState:
    """Cosine-scheduled SGD over independent parameter groups."""

    groups: list[ParamGroup]
    total_epochs: int
    epoch: int = 0

    def effective_lr(self, base_lr: float) -> float:
        if self.total_epochs <= 0:
            return base_lr
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * self.epoch / self.total_epochs))


def sgd_step(state: SgdState) -> None:
    """p <- p - lr * grad for every parameter, then clear all grads.

    Raises on missing gradients and on non-finite parameter values.
    """
    for group in state.groups:
        lr = state.effective_lr(group.base_lr)
        for p in group.params:
            if p.grad is None:
                raise ContractViolation("sgd_step: parameter has no gradient")
            p.data -= lr * p.grad
            p.grad = None
    for group in state.groups:
        for p in group.params:
            p.check_finite("parameter after sgd_step")


def grad_check(builder, leaves: list[Tensor], step: float = 1e-5) -> float:
    """Compare analytic gradients of a scalar-valued graph to central differences.

    ``builder`` must be a pure function of the leaves' current data and
    return a scalar Tensor. Returns the max relative error over all leaf
    coordinates, with the relative error defined as
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    for leaf in leaves:
        leaf.zero_grad()
    out = builder()
    if out.size != 1:
        raise ContractViolation("grad_check builder must return a scalar")
    out.backward()
    analytic = [np.array(leaf.grad, copy=True) if leaf.grad is not None
                else np.zeros_like(leaf.data) for leaf in leaves]
    worst = 0.0
    for leaf, ga in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = builder().item()
            flat[i] = orig - step
            lo = builder().item()
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = ga.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    for leaf in leaves:
        leaf.zero_grad()
    return worst
