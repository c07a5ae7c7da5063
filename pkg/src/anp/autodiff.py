"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When at least one operand
requires a gradient, the result records its parents and an adjoint rule, so
calling :func:`backward` on a scalar walks the recorded graph once in reverse
topological order.  Leading axes broadcast the way numpy does; adjoints sum
gradients back over broadcast axes.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64

_debug = False
_recording = True


def set_debug(enabled: bool) -> None:
    """Toggle NaN/Inf checks on every forward value."""
    global _debug
    _debug = bool(enabled)


@contextmanager
def no_grad():
    """Evaluate without recording a graph (inference)."""
    global _recording
    previous = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = previous


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A numpy array plus an optional handle into the differentiation graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, "mul", (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def back(g):
        gb = g / b.data
        ga = _unbroadcast(gb, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-gb * out, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "div", (a, b), back)


def square(a: Tensor) -> Tensor:
    def back(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, "square", (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        return (g * mask,)

    # NaN passes through so a corrupted parameter cannot hide behind the mask
    return _make(np.where(mask | np.isnan(a.data), a.data, 0.0), "relu", (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def back(g):
        return (g * s * (1.0 - s),)

    return _make(s, "sigmoid", (a,), back)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        return (g * _sigmoid(x),)

    return _make(out, "softplus", (a,), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def back(g):
        return (g * out,)

    return _make(out, "exp", (a,), back)


def log(a: Tensor) -> Tensor:
    x = a.data

    def back(g):
        return (g / x,)

    return _make(np.log(x), "log", (a,), back)


# reductions / shape -------------------------------------------------------

def _norm_axis(axis: int, ndim: int) -> int:
    return axis if axis >= 0 else axis + ndim


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,), back)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), "mean", (a,), back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape

    def back(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), "reshape", (a,), back)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    def back(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _make(np.swapaxes(a.data, ax1, ax2), "swapaxes", (a,), back)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None

    def back(g):
        return (_unbroadcast(g, old),)

    return _make(out, "broadcast_to", (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = _norm_axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] != tensors[0].shape[:ax] or t.shape[ax + 1:] != tensors[0].shape[ax + 1:]:
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}"
            )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), "concat", tensors, back)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    shape = a.shape

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[..., start:stop] = g
        return (full,)

    return _make(a.data[..., start:stop], "slice_last", (a,), back)


# linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def back(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make(out, "matmul", (a, b), back)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "matmul", (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    k, n = weight.shape
    if x.shape[-1] != k or bias.shape != (n,):
        raise ShapeError(
            f"linear: input {x.shape} incompatible with weight {weight.shape} / bias {bias.shape}"
        )
    x2 = x.data.reshape(-1, k)
    out = (x2 @ weight.data + bias.data).reshape(x.shape[:-1] + (n,))

    def back(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _make(out, "linear", (x, weight, bias), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _make(s, "softmax", (a,), back)


def l1_distance(q: Tensor, k: Tensor) -> Tensor:
    """Pairwise L1 distances: ``out[..., i, j] = sum |q[..., i, :] - k[..., j, :]|``."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"l1_distance: widths differ, {q.shape} vs {k.shape}")
    diff = q.data[..., :, None, :] - k.data[..., None, :, :]
    out = np.abs(diff).sum(axis=-1)

    def back(g):
        sg = np.sign(diff) * g[..., None]
        gq = _unbroadcast(sg.sum(axis=-2), q.shape) if q.requires_grad else None
        gk = _unbroadcast(-sg.sum(axis=-3), k.shape) if k.requires_grad else None
        return gq, gk

    return _make(out, "l1_distance", (q, k), back)


# differentiation ----------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Adjoints of ``loss`` keyed by ``id(tensor)`` for every leaf (or for ``wrt``)."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, np.ndarray] = {}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[id(node)] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if wrt is None:
        return leaves
    return {id(t): leaves.get(id(t), np.zeros_like(t.data)) for t in wrt}


def grad(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each named parameter."""
    by_id = backward(loss, params.values())
    return {name: by_id[id(t)] for name, t in params.items()}


# MLPs ---------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, prefix: str, widths: Sequence[int]) -> dict[str, Tensor]:
    params = {}
    for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"{prefix}/{i}/W"] = parameter(glorot_uniform(rng, w_in, w_out))
        params[f"{prefix}/{i}/b"] = parameter(np.zeros(w_out))
    return params


def forward_mlp(params: Mapping[str, Tensor], prefix: str, x: Tensor, widths: Sequence[int]) -> Tensor:
    """ReLU MLP with an affine final layer; ``widths`` = [d_in, hidden..., d_out]."""
    n_layers = len(widths) - 1
    h = x
    for i in range(n_layers):
        key_w, key_b = f"{prefix}/{i}/W", f"{prefix}/{i}/b"
        for key in (key_w, key_b):
            if key not in params:
                raise KeyError(f"forward_mlp: missing parameter {key!r}")
        w, b = params[key_w], params[key_b]
        if w.shape != (widths[i], widths[i + 1]):
            raise ShapeError(
                f"forward_mlp: {key_w} has shape {w.shape}, expected {(widths[i], widths[i + 1])}"
            )
        h = linear(h, w, b)
        if i < n_layers - 1:
            h = relu(h)
    return h
