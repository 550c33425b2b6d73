"""Small strided CNN producing the (N, C, H, W) feature batch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import ConvBN, Module
from .tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    input_height: int = 96
    input_width: int = 32
    widths: tuple[int, ...] = (16, 32)
    channels: int = 64
    seed: int = 0

    @property
    def stages(self) -> int:
        return len(self.widths) + 1

    @property
    def downsample(self) -> int:
        return 2**self.stages

    @property
    def feature_height(self) -> int:
        return self.input_height // self.downsample

    @property
    def feature_width(self) -> int:
        return self.input_width // self.downsample

    def validate(self, parts: int | None = None) -> list[str]:
        errors = []
        d = self.downsample
        if self.input_height % d or self.input_width % d:
            errors.append(f"input {self.input_height}x{self.input_width} is not divisible by the downsample factor {d}")
        if parts is not None and self.feature_height % parts:
            errors.append(f"feature height {self.feature_height} is not divisible by K={parts}")
        if self.channels < 1 or any(w < 1 for w in self.widths):
            errors.append("channel widths must be positive")
        return errors

    @classmethod
    def for_grid(cls, input_height: int, input_width: int, downsample: int, channels: int = 64, **kw) -> "BackboneConfig":
        stages = int(round(math.log2(downsample)))
        if 2**stages != downsample or stages < 1:
            raise ConfigError(f"downsample factor {downsample} must be a power of two >= 2")
        widths = tuple(min(channels, 16 * 2**i) for i in range(stages - 1))
        return cls(input_height, input_width, widths, channels, **kw)


class Backbone(Module):
    """Stride-2 conv3x3 + BN + ReLU stages; the last stage has ``channels`` outputs."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator | None = None, parts: int | None = None):
        errors = config.validate(parts)
        if errors:
            raise ConfigError("; ".join(errors))
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        widths = [3, *config.widths, config.channels]
        self.stages = [ConvBN(widths[i], widths[i + 1], rng, kernel=3, stride=2) for i in range(len(widths) - 1)]

    def __call__(self, images: Tensor) -> Tensor:
        c = self.config
        if images.ndim != 4 or images.shape[1:] != (3, c.input_height, c.input_width):
            raise ValueError(f"expected images (N, 3, {c.input_height}, {c.input_width}), got {images.shape}")
        x = images
        for stage in self.stages:
            x = stage(x)
        return x
