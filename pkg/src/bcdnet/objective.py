"""PK batch sampling, identity/triplet losses, the total objective and SGD."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class PkBatch:
    indices: np.ndarray  # dataset positions, identity-major
    labels: np.ndarray  # identity of each position
    P: int
    A: int

    @property
    def size(self) -> int:
        return self.P * self.A


def sample_pk(labels: Sequence[int], P: int, A: int, rng: np.random.Generator) -> PkBatch:
    """P distinct identities, A images each (with replacement only when an identity is short)."""
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if P < 1 or A < 1:
        raise SamplingError("P and A must be positive")
    if len(ids) < P:
        raise SamplingError(f"need {P} identities, dataset has {len(ids)}")
    chosen = rng.choice(ids, size=P, replace=False)
    picks = []
    for pid in chosen:
        pool = np.flatnonzero(labels == pid)
        picks.append(rng.choice(pool, size=A, replace=len(pool) < A))
    indices = np.concatenate(picks)
    return PkBatch(indices, labels[indices], P, A)


def cross_entropy_part(logits: Tensor, labels: Iterable[int]) -> Tensor:
    """Mean negative log-softmax at the true class."""
    return tn.softmax_cross_entropy(logits, labels)


def cosine_distance_matrix(h: Tensor) -> Tensor:
    unit = tn.l2_normalize(h, axis=1)
    return tn.add(tn.neg(tn.matmul(unit, tn.transpose(unit))), 1.0)


def batch_hard_triplet(h: Tensor, labels: Sequence[int], alpha: float = 0.20) -> Tensor:
    """Batch-hard triplet loss with cosine distance.

    The hardest positive ranges over every same-identity image including the
    anchor itself.  Hinge terms are averaged over the anchors that violate the
    margin; with no violations the loss is 0.
    """
    labels = np.asarray(labels)
    if h.ndim != 2 or labels.shape != (h.shape[0],):
        raise tn.ShapeError(f"triplet: embeddings {h.shape} vs labels {labels.shape}")
    same = labels[:, None] == labels[None, :]
    if same.all(axis=1).any():
        raise SamplingError("every anchor needs at least one negative (P >= 2)")
    dist = cosine_distance_matrix(h)
    hardest_pos = tn.masked_max(dist, same)
    hardest_neg = tn.masked_min(dist, ~same)
    hinge = tn.relu(tn.add(tn.sub(hardest_pos, hardest_neg), float(alpha)))
    violations = int(np.count_nonzero(hinge.data > 0))
    if violations == 0:
        return Tensor(0.0)
    return tn.mul(tn.sum(hinge), 1.0 / violations)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.20
    lambda1: float = 1.0
    lambda2: float = 1.0
    use_bcca_loss: bool = True
    use_part_reg: bool = True
    use_holistic_reg: bool = True


@dataclass
class LossTerms:
    """Individual objective terms of one batch; disabled terms stay empty/None."""

    identity: list[Tensor] = field(default_factory=list)
    triplet: Tensor | None = None
    attention: list[Tensor] = field(default_factory=list)
    part_reg: list[Tensor] = field(default_factory=list)
    holistic_reg: Tensor | None = None
    stripe_identity: list[Tensor] = field(default_factory=list)

    def scalars(self) -> dict[str, float]:
        def total(items):
            return float(np.sum([t.item() for t in items])) if items else 0.0

        return {
            "identity": total(self.identity),
            "triplet": self.triplet.item() if self.triplet is not None else 0.0,
            "attention": total(self.attention),
            "part_reg": total(self.part_reg),
            "holistic_reg": self.holistic_reg.item() if self.holistic_reg is not None else 0.0,
            "stripe_identity": total(self.stripe_identity),
        }


def _sum(items: Iterable[Tensor | None]) -> Tensor | None:
    acc = None
    for t in items:
        if t is None:
            continue
        acc = t if acc is None else tn.add(acc, t)
    return acc


def total_loss(terms: LossTerms, weights: LossWeights) -> Tensor:
    """Identity + triplet + lambda1 * attention + lambda2 * (holistic + part) + stripe identity."""
    parts: list[Tensor] = []
    base = _sum([*terms.identity, terms.triplet, *terms.stripe_identity])
    if base is not None:
        parts.append(base)
    att = _sum(terms.attention) if weights.use_bcca_loss else None
    if att is not None and weights.lambda1 != 0:
        parts.append(tn.mul(att, weights.lambda1))
    spatial = _sum(
        [terms.holistic_reg if weights.use_holistic_reg else None]
        + (list(terms.part_reg) if weights.use_part_reg else [])
    )
    if spatial is not None and weights.lambda2 != 0:
        parts.append(tn.mul(spatial, weights.lambda2))
    out = _sum(parts)
    return Tensor(0.0) if out is None else out


def lr_at(epoch: int, base_lr: float, milestones: Sequence[int], factor: float = 0.1) -> float:
    """Step schedule: multiply by ``factor`` at each milestone epoch (0-based epochs)."""
    return base_lr * factor ** sum(1 for m in milestones if epoch >= m)


def sgd_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    velocity: dict[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """In-place momentum SGD with L2 decay folded into the gradient.

    Returns the updated velocity buffers; pass them back on the next call.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    velocity = {} if velocity is None else velocity
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g
        if weight_decay:
            g = g + weight_decay * p.data
        if momentum:
            v = velocity.get(name)
            v = g.copy() if v is None else momentum * v + g
            velocity[name] = v
            g = v
        p.data -= lr * g
    return velocity


class SGD:
    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        sgd_step(self.params, grads, lr, self.momentum, self.weight_decay, self.velocity)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
