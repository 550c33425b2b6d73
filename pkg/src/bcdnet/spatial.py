"""Height-profile KL regularizers (part-level and holistic).

Each part's post-conv1 maps are pooled over images, channels and columns into
a per-row response profile, L1-normalized, and pulled towards a band-shaped
target with a KL divergence.  The holistic term pools all parts together and
targets the flat profile, which rewards parts that jointly cover the body.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import EPS, Tensor


class InfeasibleGammaError(ValueError):
    pass


def gamma_band(parts: int, height: int) -> tuple[float, float]:
    """Range of gamma keeping every target entry a valid probability."""
    return 1.0 / height, parts / height


def part_target(k: int, parts: int, height: int, gamma: float) -> np.ndarray:
    """Target profile for part ``k`` (0-based): ``gamma`` on its band, a flat remainder elsewhere."""
    if height % parts:
        raise ValueError(f"height {height} is not divisible by K={parts}")
    if not 0 <= k < parts:
        raise IndexError(f"part {k} out of range for K={parts}")
    lo, hi = gamma_band(parts, height)
    if not lo - 1e-15 <= gamma <= hi + 1e-15:
        raise InfeasibleGammaError(f"gamma={gamma} outside the feasible band [{lo:.6g}, {hi:.6g}] for K={parts}, H={height}")
    rows = height // parts
    off = (parts - gamma * height) / (height * (parts - 1)) if parts > 1 else 0.0
    target = np.full(height, max(off, 0.0))
    target[k * rows : (k + 1) * rows] = gamma
    return target


def holistic_target(height: int) -> np.ndarray:
    return np.full(height, 1.0 / height)


def row_means(F: Tensor) -> Tensor:
    """Mean over images, channels and columns for each row: (N, U, H, W) -> (H,)."""
    if F.ndim != 4:
        raise tn.ShapeError(f"expected (N, C, H, W) maps, got {F.shape}")
    return tn.mean(F, axis=(0, 1, 3))


def _normalize(z: Tensor) -> Tensor:
    if not np.any(z.data):
        # no response anywhere: fall back to the flat profile
        return Tensor(np.full(z.shape, 1.0 / z.size))
    return tn.l1_normalize(z)


def part_profile(F: Tensor) -> Tensor:
    return _normalize(row_means(F))


def holistic_profile(maps: Sequence[Tensor]) -> Tensor:
    # every part contributes N*U*W elements per row, so the pooled mean is the mean of part means
    pooled = row_means(maps[0])
    for F in maps[1:]:
        if F.shape != maps[0].shape:
            raise tn.ShapeError(f"part maps differ in shape: {maps[0].shape} vs {F.shape}")
        pooled = tn.add(pooled, row_means(F))
    return _normalize(tn.mul(pooled, 1.0 / len(maps)))


def kl_loss(target, pred: Tensor) -> Tensor:
    """sum_l target(l) * log(target(l) / pred(l)); rows with zero target drop out."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise tn.ShapeError(f"kl_loss: target {target.shape} vs prediction {pred.shape}")
    support = target > 0
    t = target[support]
    const = float(np.sum(t * np.log(t)))
    logp = tn.log(tn.add(pred, EPS))
    return tn.add(tn.neg(tn.dot(logp, Tensor(np.where(support, target, 0.0)))), const)


def part_losses(maps: Sequence[Tensor], gamma: float) -> list[Tensor]:
    parts = len(maps)
    out = []
    for k, F in enumerate(maps):
        target = part_target(k, parts, F.shape[2], gamma)
        out.append(kl_loss(target, part_profile(F)))
    return out


def holistic_loss(maps: Sequence[Tensor]) -> Tensor:
    return kl_loss(holistic_target(maps[0].shape[2]), holistic_profile(maps))
