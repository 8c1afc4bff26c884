"""Frozen convolutional encoder with cosine-similarity class prototypes.

The encoder's weights are drawn once from a documented seed and never
updated; gradients still flow through it to the prompt and mask
parameters. Class prototypes are unit-norm embedding means of clean
(un-prompted) training images, playing the role of fixed per-class
reference vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _make
from .errors import ContractViolation, DataError, NumericError

EMBED_DIM = 64
_STAGES = ((3, 16), (16, 32), (32, 64))

DEFAULT_LOGIT_SCALE = 100.0


@dataclass
class FrozenEncoder:
    """Three stride-2 conv stages, global average pool, fixed linear map."""

    kernels: list[Tensor]
    biases: list[Tensor]
    proj: Tensor  # 64 x EMBED_DIM
    seed: int

    @classmethod
    def create(cls, seed: int) -> "FrozenEncoder":
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        kernels, biases = [], []
        for cin, cout in _STAGES:
            std = np.sqrt(2.0 / (cin * 9))
            kernels.append(Tensor(rng.normal(0.0, std, size=(cout, cin, 3, 3))))
            biases.append(Tensor(rng.normal(0.0, 0.1, size=cout)))
        proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(_STAGES[-1][1]),
                                 size=(_STAGES[-1][1], EMBED_DIM)))
        return cls(kernels=kernels, biases=biases, proj=proj, seed=seed)

    def weights(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (k, b) in enumerate(zip(self.kernels, self.biases)):
            out[f"encoder.conv{i}.kernel"] = k.data
            out[f"encoder.conv{i}.bias"] = b.data
        out["encoder.proj"] = self.proj.data
        return out

    @classmethod
    def from_weights(cls, weights: dict[str, np.ndarray], seed: int = -1) -> "FrozenEncoder":
        kernels = [Tensor(weights[f"encoder.conv{i}.kernel"]) for i in range(3)]
        biases = [Tensor(weights[f"encoder.conv{i}.bias"]) for i in range(3)]
        return cls(kernels=kernels, biases=biases,
                   proj=Tensor(weights["encoder.proj"]), seed=seed)


def encode(x, encoder: FrozenEncoder) -> Tensor:
    """Map a prompted image (3xHxW or batch Nx3xHxW) to embeddings."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    batched = xt.data.ndim == 4
    h, w = xt.shape[-2:]
    if h < 8 or w < 8:
        raise ContractViolation(
            f"encode needs spatial dims >= 8 for three stride-2 stages, got {h}x{w}")
    out = xt if batched else ad.reshape(xt, (1,) + tuple(xt.shape))
    for k, b in zip(encoder.kernels, encoder.biases):
        out = ad.relu(ad.conv2d(out, k, b, stride=2, padding=1))
    emb = ad.matmul(ad.spatial_mean(out), encoder.proj)
    return emb if batched else ad.reshape(emb, (EMBED_DIM,))


@dataclass(frozen=True)
class ClassPrototypes:
    """K unit-norm class vectors plus their construction metadata."""

    vectors: np.ndarray  # K x EMBED_DIM, rows unit norm
    per_class_n: int
    seed: int

    def __post_init__(self):
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ContractViolation("prototypes must be unit norm")


def build_prototypes(images: np.ndarray, labels: np.ndarray,
                     encoder: FrozenEncoder, per_class_n: int,
                     batch_size: int = 128) -> ClassPrototypes:
    """Normalized mean embedding of the first ``per_class_n`` clean samples per class."""
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1
    picks = []
    for c in range(k):
        idx = np.flatnonzero(labels == c)[:per_class_n]
        if idx.size < per_class_n:
            raise DataError(f"class {c} has only {idx.size} samples, need {per_class_n}")
        picks.append(idx)
    vectors = np.empty((k, EMBED_DIM))
    for c, idx in enumerate(picks):
        embs = []
        for start in range(0, idx.size, batch_size):
            embs.append(encode(Tensor(images[idx[start:start + batch_size]]),
                               encoder).data)
        mean = np.concatenate(embs).mean(axis=0)
        vectors[c] = mean / np.linalg.norm(mean)
    return ClassPrototypes(vectors=vectors, per_class_n=per_class_n, seed=encoder.seed)


def similarity_logits(embedding, prototypes: ClassPrototypes,
                      scale: float = DEFAULT_LOGIT_SCALE) -> Tensor:
    """scale * cosine(embedding, prototype_c) for each class.

    Accepts a single embedding or an N x d batch; prototypes are constant.
    """
    if not scale > 0.0:
        raise ContractViolation(f"logit scale must be > 0, got {scale}")
    et = embedding if isinstance(embedding, Tensor) else Tensor(embedding)
    batched = et.data.ndim == 2
    e = et.data if batched else et.data[None]
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm embedding in similarity_logits")
    ehat = e / norms
    p = prototypes.vectors  # rows already unit norm
    scores = scale * (ehat @ p.T)

    def backward(g):
        gb = g if batched else g[None]
        gp = scale * (gb @ p)                                  # n x d
        inner = np.sum(gp * ehat, axis=1, keepdims=True)
        de = (gp - ehat * inner) / norms
        et._accumulate(de if batched else de[0])

    return _make(scores if batched else scores[0], (et,),
                 "similarity_logits", backward)


def loss(scores, label) -> Tensor:
    """Cross-entropy of softmax(scores) against the label(s)."""
    st = scores if isinstance(scores, Tensor) else Tensor(scores)
    return ad.cross_entropy(st, label)
