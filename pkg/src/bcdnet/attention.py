"""Per-part channel attention and its batch-level cosine supervision."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .backbone import ConfigError
from .nn import LinearBN, Module
from .tensor import EPS, Tensor

ATTENTION_VARIANTS = ("standard", "variant1", "variant2")


class ChannelAttention(Module):
    """GMP -> 1x1 conv (C/r) + BN + ReLU -> 1x1 conv (C) + BN -> sigmoid."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 16):
        if channels % reduction:
            raise ConfigError(f"C={channels} is not divisible by the reduction ratio {reduction}")
        hidden = channels // reduction
        self.squeeze = LinearBN(channels, hidden, rng)
        self.excite = LinearBN(hidden, channels, rng)

    def __call__(self, T: Tensor) -> Tensor:
        pooled = tn.global_max_pool(T)
        return tn.sigmoid(self.excite(tn.relu(self.squeeze(pooled))))


def recalibrate(weights: Tensor, T: Tensor) -> Tensor:
    return tn.channel_mul(weights, T)


def batch_mean(weights: Tensor) -> Tensor:
    """(N, C) -> (C,) mean over images in fixed order."""
    return tn.mean(weights, axis=0)


def cosine_distance(x: Tensor, target) -> Tensor:
    """1 - x.t / (|x| |t| + eps) for a fixed target vector."""
    target = np.asarray(target, dtype=np.float64)
    if x.shape != target.shape:
        raise tn.ShapeError(f"cosine distance: {x.shape} vs {target.shape}")
    norm = tn.sqrt(tn.dot(x, x))
    denom = tn.add(tn.mul(norm, float(np.linalg.norm(target))), EPS)
    return tn.add(tn.neg(tn.div(tn.dot(x, Tensor(target)), denom)), 1.0)


def bcca_loss(mean_weights: Tensor, target) -> Tensor | None:
    """Cosine distance to the part's supervision column; None when that column is all zero."""
    target = np.asarray(target, dtype=np.float64)
    if not np.any(target):
        return None
    return cosine_distance(mean_weights, target)


def per_image_bcca_loss(weights: Tensor, target) -> Tensor | None:
    """Mean over images of each image's cosine distance to the target (no batch averaging first)."""
    target = np.asarray(target, dtype=np.float64)
    if not np.any(target):
        return None
    unit = target / np.linalg.norm(target)
    cos = tn.matmul(tn.l2_normalize(weights, axis=1), Tensor(unit[:, None]))
    return tn.add(tn.neg(tn.mean(cos)), 1.0)
