"""Batch-estimated part/channel relevance targets for channel attention.

For every backbone channel c the N per-image maps of that channel are grouped
by which horizontal band holds their peak response.  The group counts are
max-normalized into a relevance vector, and channels whose dominant band
collects fewer than ``floor(beta * N)`` peaks are treated as irrelevant and
zeroed.  Stacking the vectors gives the (C, K) supervision matrix whose k-th
column is the attention target for part k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUPERVISION_VARIANTS = ("batch", "one_hot", "no_filtration")


@dataclass(frozen=True)
class RegionPartition:
    """K equal row bands over a height-H map (0-based, half-open)."""

    height: int
    parts: int

    def __post_init__(self):
        if self.parts < 1 or self.height < 1 or self.height % self.parts:
            raise ValueError(f"height {self.height} is not divisible by K={self.parts}")

    @property
    def rows_per_part(self) -> int:
        return self.height // self.parts

    def rows(self, k: int) -> range:
        r = self.rows_per_part
        return range(k * r, (k + 1) * r)

    def region_of_row(self, row):
        return np.asarray(row) // self.rows_per_part


def stack_channel(T: np.ndarray, c: int) -> np.ndarray:
    """Maps of channel ``c`` for every image, shape (N, H, W)."""
    T = np.asarray(T)
    if T.ndim != 4:
        raise ValueError(f"expected an (N, C, H, W) feature batch, got shape {T.shape}")
    if not 0 <= c < T.shape[1]:
        raise IndexError(f"channel {c} out of range for C={T.shape[1]}")
    return T[:, c].copy()


def peak_rows(maps: np.ndarray) -> np.ndarray:
    """Row of the first (row-major) maximum of each (..., H, W) map."""
    h, w = maps.shape[-2:]
    flat = maps.reshape(*maps.shape[:-2], h * w)
    return flat.argmax(axis=-1) // w


def group_channels(M_c: np.ndarray, partition: RegionPartition) -> np.ndarray:
    """Count how many of the N slices peak inside each region."""
    if M_c.ndim != 3 or M_c.shape[1] != partition.height:
        raise ValueError(f"maps of shape {M_c.shape} do not match partition height {partition.height}")
    regions = partition.region_of_row(peak_rows(M_c))
    return np.bincount(regions, minlength=partition.parts).astype(np.int64)


def normalize_relevance(v_c, n: int, beta: float, variant: str = "batch") -> np.ndarray:
    v_c = np.asarray(v_c, dtype=np.int64)
    if n <= 0:
        raise ValueError("batch size must be positive")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if variant not in SUPERVISION_VARIANTS:
        raise ValueError(f"unknown supervision variant {variant!r}")
    peak = int(v_c.max())
    if variant != "no_filtration" and peak < math.floor(beta * n):
        return np.zeros(v_c.shape)
    if peak == 0:
        return np.zeros(v_c.shape)
    if variant == "one_hot":
        out = np.zeros(v_c.shape)
        out[int(v_c.argmax())] = 1.0
        return out
    return v_c / peak


def group_counts(T: np.ndarray, parts: int) -> np.ndarray:
    """(C, K) matrix of peak counts for every channel at once."""
    T = np.asarray(T)
    n, c, h, w = T.shape
    partition = RegionPartition(h, parts)
    regions = partition.region_of_row(peak_rows(T))  # (N, C)
    counts = np.zeros((c, parts), dtype=np.int64)
    np.add.at(counts, (np.broadcast_to(np.arange(c), (n, c)), regions), 1)
    return counts


def estimate_supervision(T, parts: int, beta: float, variant: str = "batch") -> np.ndarray:
    """Supervision matrix of shape (C, K); column k targets part k's attention."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 4:
        raise ValueError(f"expected an (N, C, H, W) feature batch, got shape {T.shape}")
    counts = group_counts(T, parts)
    n = T.shape[0]
    return np.stack([normalize_relevance(row, n, beta, variant) for row in counts])
