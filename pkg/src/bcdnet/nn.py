"""Parameter containers and the conv/BN building blocks shared by the model."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .tensor import BatchNormState, Tensor


class Module:
    """Walks its attributes to find parameters, BN states and sub-modules."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, BatchNormState, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, BatchNormState]:
        out: dict[str, BatchNormState] = {}
        for name, value in self._children():
            if isinstance(value, BatchNormState):
                out[prefix + name] = value
            elif isinstance(value, Module):
                out.update(value.named_buffers(f"{prefix}{name}."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.state = BatchNormState(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return tn.batch_norm(x, self.weight, self.bias, self.state, self.training)


class ConvBN(Module):
    """Square conv, batch norm, optional ReLU on (N, C, H, W) maps."""

    def __init__(self, cin: int, cout: int, rng, kernel: int = 1, stride: int = 1, relu: bool = True):
        self.kernel, self.stride, self.relu = kernel, stride, relu
        fan_in = cin * kernel * kernel
        shape = (cout, cin) if kernel == 1 else (cout, cin, kernel, kernel)
        self.weight = fan_in_uniform(rng, shape, fan_in)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.bn = BatchNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        if self.kernel == 1 and self.stride == 1:
            y = tn.conv1x1(x, self.weight, self.bias)
        else:
            y = tn.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.kernel // 2)
        y = self.bn(y)
        return tn.relu(y) if self.relu else y


class LinearBN(Module):
    """1x1 conv applied to pooled (N, C) vectors, then batch norm."""

    def __init__(self, cin: int, cout: int, rng):
        self.weight = fan_in_uniform(rng, (cout, cin), cin)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)
        self.bn = BatchNorm(cout)

    def __call__(self, x: Tensor) -> Tensor:
        return self.bn(tn.linear(x, self.weight, self.bias))
