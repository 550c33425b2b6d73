"""Part sub-networks, stripe sub-networks and the concatenated embedding."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as tn
from .nn import ConvBN, LinearBN, Module
from .tensor import Tensor


class SubnetOutput(NamedTuple):
    feature: Tensor  # (N, D) part feature after conv2
    logits: Tensor | None  # (N, J); None when the classifier is skipped
    maps: Tensor  # (N, D, H, W) post-conv1 maps used by the spatial regularizers


class PartSubnet(Module):
    """conv1x1 + BN + ReLU -> GMP -> conv1x1 + BN + ReLU -> bias-free classifier."""

    def __init__(self, channels: int, width: int, num_classes: int, rng: np.random.Generator):
        self.conv1 = ConvBN(channels, width, rng)
        self.conv2 = LinearBN(width, width, rng)
        self.classifier = Tensor(rng.normal(0.0, 0.01, size=(num_classes, width)), requires_grad=True)

    def __call__(self, x: Tensor, classify: bool = True) -> SubnetOutput:
        maps = self.conv1(x)
        feature = tn.relu(self.conv2(tn.global_max_pool(maps)))
        logits = tn.linear(feature, self.classifier) if classify else None
        return SubnetOutput(feature, logits, maps)


def assemble_holistic(features: Sequence[Tensor]) -> Tensor:
    """Concatenate the K (N, D) part features into (N, K*D) in part order."""
    return tn.concat(list(features), axis=1)


def split_holistic(h: np.ndarray, parts: int) -> np.ndarray:
    """Inverse of :func:`assemble_holistic` on plain arrays: (N, K*D) -> (N, K, D)."""
    h = np.asarray(h)
    return h.reshape(h.shape[0], parts, h.shape[1] // parts)


def stripes(T: Tensor, parts: int) -> list[Tensor]:
    """Slice (N, C, H, W) into K equal height bands, top to bottom."""
    h = T.shape[2]
    if h % parts:
        raise ValueError(f"height {h} is not divisible by K={parts}")
    r = h // parts
    return [tn.slice_axis(T, 2, k * r, (k + 1) * r) for k in range(parts)]


def stripe_subnets_forward(T: Tensor, subnets: Sequence[PartSubnet]) -> list[Tensor]:
    """Logits of each stripe sub-network on its own band of T."""
    return [net(band).logits for net, band in zip(subnets, stripes(T, len(subnets)))]
