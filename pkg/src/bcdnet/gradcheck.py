"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class NonFiniteError(ArithmeticError):
    pass


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    with tn.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(Tensor(x)).item()
            flat[i] = orig - step
            fm = f(Tensor(x)).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"f is not finite around coordinate {i}")
            gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    with tn.fresh_tape():
        xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
        out = f(xt)
        if out.size != 1:
            raise tn.ShapeError(f"gradient check needs a scalar function, got shape {out.shape}")
        if not np.isfinite(out.item()):
            raise NonFiniteError("f is not finite at x")
        tn.backward(out)
    return np.zeros_like(xt.data) if xt.grad is None else xt.grad


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    a = analytic_grad(f, x)
    n = numerical_grad(f, x, step)
    return float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)))) if x.size else 0.0
