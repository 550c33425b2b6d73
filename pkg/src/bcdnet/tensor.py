"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the network and its losses need are provided.  There is
no general broadcasting: elementwise binary ops take operands of identical
shape (or a Python scalar), and the few broadcast patterns the model relies on
have dedicated ops (``channel_mul``, ``repeat_rows``, ``l2_normalize``...).

Every op that receives at least one input with ``requires_grad`` appends its
output to the active :class:`Tape`.  Because outputs are appended in creation
order, the tape is already topologically sorted and :func:`backward` walks it
once in reverse.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

EPS = 1e-12
BN_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable ops (outputs in creation order)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, out: Tensor) -> None:
        self.nodes.append(out)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)


_tape = Tape()
_grad_enabled = True


def get_tape() -> Tape:
    return _tape


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def fresh_tape():
    """Run with an isolated tape, restoring the previous one afterwards."""
    global _tape
    prev = _tape
    _tape = Tape()
    try:
        yield _tape
    finally:
        _tape.clear()
        _tape = prev


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _tape.record(out)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The tape is cleared afterwards, so intermediate tensors cannot be
    backpropagated through twice.
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad")
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    _tape.clear()


# ----------------------------------------------------------------------------
# shape helpers


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return _result(a.data + b, (a,), lambda g: (g,), "add_scalar")
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        s = float(b)
        return _result(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    if _is_scalar(b):
        return mul(a, 1.0 / float(b))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        gb = g / b.data
        return gb, -gb * out

    return _result(out, (a, b), bw, "div")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive input")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    """Square root; the gradient at exactly 0 is taken as 0."""
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    out = np.sqrt(a.data)
    safe = np.where(out > 0, out, 1.0)
    return _result(out, (a,), lambda g: (np.where(out > 0, 0.5 * g / safe, 0.0),), "sqrt")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    if _is_scalar(b):
        a = as_tensor(a)
        mask = a.data >= b
        return _result(np.where(mask, a.data, float(b)), (a,), lambda g: (g * mask,), "max_scalar")
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "maximum")
    mask = a.data >= b.data
    return _result(
        np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask), "maximum"
    )


# ----------------------------------------------------------------------------
# reductions and reshaping


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _result(a.data[idx].copy(), (a,), bw, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} vs {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Tile a (1, d) row into (n, d)."""
    if a.ndim != 2 or a.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects shape (1, d), got {a.shape}")
    out = np.repeat(a.data, n, axis=0)
    return _result(out, (a,), lambda g: (g.sum(axis=0, keepdims=True),), "repeat_rows")


# ----------------------------------------------------------------------------
# linear algebra and pooling


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N, in) times weight (out, in) transposed, plus bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} for weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw, "linear")


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: x (N, Cin, H, W), weight (Cout, Cin), bias (Cout,)."""
    if x.ndim != 4 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1x1: input {x.shape} incompatible with weight {weight.shape}")
    n, cin, h, w = x.shape
    cout = weight.shape[0]
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    out = xf @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, h, w, cout).transpose(0, 3, 1, 2)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = (gf @ weight.data).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
        grads = [gx, gf.T @ xf]
        if bias is not None:
            grads.append(gf.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw, "conv1x1")


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    s = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, ho, wo, c, k, k),
        strides=(s[0], s[2] * stride, s[3] * stride, s[1], s[2], s[3]),
        writeable=False,
    )
    return cols.reshape(n * ho * wo, c * k * k), ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Square-kernel convolution: x (N, Cin, H, W), weight (Cout, Cin, k, k)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def bw(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (gf.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gcols = (gf @ wmat).reshape(n, ho, wo, cin, k, k)
            gxp = np.zeros((n, h + 2 * padding, w + 2 * padding, cin))
            for di in range(k):
                for dj in range(k):
                    gxp[:, di : di + stride * ho : stride, dj : dj + stride * wo : stride] += gcols[..., di, dj]
            gx = gxp[:, padding : padding + h, padding : padding + w].transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gf.sum(axis=0))
        return tuple(grads)

    return _result(out, parents, bw, "conv2d")


def global_max_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C); ties route to the lowest row-major index."""
    if x.ndim != 4:
        raise ShapeError(f"global_max_pool expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2)[..., 0]

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=2)
        return (gflat.reshape(x.shape),)

    return _result(out, (x,), bw, "global_max_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects 4-D input, got {x.shape}")
    return mean(x, axis=(2, 3))


def channel_mul(weights: Tensor, x: Tensor) -> Tensor:
    """Scale every channel map: weights (N, C), x (N, C, H, W)."""
    if x.ndim != 4 or weights.shape != x.shape[:2]:
        raise ShapeError(f"channel_mul: weights {weights.shape} vs maps {x.shape}")
    wb = weights.data[:, :, None, None]
    out = wb * x.data
    return _result(out, (weights, x), lambda g: ((g * x.data).sum(axis=(2, 3)), g * wb), "channel_mul")


def masked_max(x: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise max of x (N, M) over entries where mask is True.

    Ties route to the lowest column index.  Each row needs one True entry.
    """
    return _masked_extreme(x, mask, largest=True)


def masked_min(x: Tensor, mask: np.ndarray) -> Tensor:
    return _masked_extreme(x, mask, largest=False)


def _masked_extreme(x: Tensor, mask: np.ndarray, largest: bool) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if x.ndim != 2 or mask.shape != x.shape:
        raise ShapeError(f"masked reduction: values {x.shape} vs mask {mask.shape}")
    if not mask.any(axis=1).all():
        raise ValueError("masked reduction: a row has no selectable entries")
    fill = -np.inf if largest else np.inf
    vals = np.where(mask, x.data, fill)
    idx = vals.argmax(axis=1) if largest else vals.argmin(axis=1)
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _result(out, (x,), bw, "masked_max" if largest else "masked_min")


# ----------------------------------------------------------------------------
# normalizations


def l1_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """x / (sum |x| + eps) along ``axis``."""
    denom = np.abs(x.data).sum(axis=axis, keepdims=True) + EPS
    out = x.data / denom

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner * np.sign(x.data)) / denom,)

    return _result(out, (x,), bw, "l1_normalize")


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """x / (||x|| + eps) along ``axis``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = norm + EPS
    out = x.data / denom

    def bw(g):
        inner = (g * x.data).sum(axis=axis, keepdims=True)
        safe = np.where(norm > 0, norm, 1.0)
        return (g / denom - x.data * inner / (denom * denom * safe) * (norm > 0),)

    return _result(out, (x,), bw, "l2_normalize")


class BatchNormState:
    """Running statistics of one batch-norm layer (not differentiated)."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Batch normalization over (N,) for 2-D input or (N, H, W) for 4-D input."""
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects 2-D or 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine params {gamma.shape}/{beta.shape} for {c} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        count = x.size // c
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * count / (count - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bw(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            mean_g = gxhat.mean(axis=axes, keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=axes, keepdims=True)
            gx = (gxhat - mean_g - xhat * mean_gx) * inv.reshape(bshape)
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), bw, "batch_norm")


# ----------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits: Tensor, labels: Iterable[int]) -> Tensor:
    """Mean over rows of -log softmax(logits)[label]."""
    labels = np.asarray(list(labels), dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    n, j = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= j:
        raise ValueError(f"cross entropy: label outside [0, {j})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float((logz - shifted[rows, labels]).mean())

    def bw(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _result(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")


def dot(a: Tensor, b: Tensor) -> Tensor:
    return sum(mul(a, b))
