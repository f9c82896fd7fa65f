"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that has at least one differentiable parent records a node
holding its parents and a closure mapping the upstream gradient to one
gradient per parent.  Nodes carry a monotonically increasing sequence id, so
sorting the nodes reachable from a root by that id yields the tape in
topological order; :func:`backward` sweeps it once in reverse.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "Tape",
    "ShapeError",
    "DomainError",
    "tensor",
    "parameter",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "relu",
    "exp",
    "log",
    "abs_",
    "sigmoid",
    "tanh",
    "square",
    "matmul",
    "reduce",
    "sum_",
    "mean",
    "frobenius_sq",
    "softmax_lastdim",
    "logsumexp_lastdim",
    "log_softmax_lastdim",
    "reshape",
    "transpose",
    "swapaxes",
    "getitem",
    "stack",
    "concat",
    "diagonal_lastdims",
    "detach",
    "no_grad",
    "backward",
    "zero_grad",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


_seq = itertools.count()


@dataclass(eq=False)
class Node:
    op: str
    parents: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    seq: int = field(default_factory=lambda: next(_seq))


class Tensor:
    """A float64 array plus an optional gradient buffer and tape node.

    Leaf tensors created with ``requires_grad=True`` are parameters; only they
    accumulate ``grad`` during :func:`backward`.
    """

    __slots__ = ("values", "grad", "requires_grad", "node")
    __array_priority__ = 100.0

    def __init__(self, values, requires_grad: bool = False, node: Node | None = None):
        arr = np.array(values, dtype=np.float64)
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{tag})"

    def __len__(self) -> int:
        return len(self.values)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def tensor(values) -> Tensor:
    """Constant tensor (never accumulates a gradient)."""
    return values if isinstance(values, Tensor) else Tensor(values)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wrap(values: np.ndarray, requires_grad: bool, node: Node | None) -> Tensor:
    # internal fast path: op results are fresh arrays, no copy needed
    t = Tensor.__new__(Tensor)
    t.values = np.asarray(values, dtype=np.float64)
    t.grad = None
    t.requires_grad = requires_grad
    t.node = node
    return t


_state = threading.local()


@contextmanager
def no_grad():
    """Evaluate without recording tape nodes (results are constants)."""
    prev = getattr(_state, "off", False)
    _state.off = True
    try:
        yield
    finally:
        _state.off = prev


def _make(values: np.ndarray, op: str, parents: tuple[Tensor, ...], back) -> Tensor:
    if not getattr(_state, "off", False) and any(p.requires_grad for p in parents):
        return _wrap(values, True, Node(op, parents, back))
    return _wrap(values, False, None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    out = a.values + b.values

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    out = a.values - b.values

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.values, b.values
    out = av * bv

    def back(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _make(out, "mul", (a, b), back)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv

    def back(g):
        return _unbroadcast(g / bv, a.shape), _unbroadcast(-g * av / (bv * bv), b.shape)

    return _make(out, "div", (a, b), back)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make(a.values * c, "scale", (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0
    # np.maximum keeps NaN visible instead of silently zeroing it
    return _make(np.maximum(a.values, 0.0), "relu", (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.values)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.values <= 0):
        bad = a.values[a.values <= 0].ravel()[0]
        raise DomainError(f"log of non-positive value {bad}")
    av = a.values
    return _make(np.log(av), "log", (a,), lambda g: (g / av,))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.values)
    return _make(np.abs(a.values), "abs", (a,), lambda g: (g * sign,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.values
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def square(a) -> Tensor:
    a = _as_tensor(a)
    av = a.values
    return _make(av * av, "square", (a,), lambda g: (2.0 * g * av,))


_UNARY = {
    "relu": relu,
    "exp": exp,
    "log": log,
    "abs": abs_,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "neg": neg,
    "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise op by name.

    ``scale`` takes its factor as ``b`` (a Python number).
    """
    if op == "scale":
        if b is None:
            raise ValueError("scale needs a factor")
        return scale(a, b)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------- matmul


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None
    av, bv = a.values, b.values
    out = av @ bv

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), back)


# ---------------------------------------------------------------- reductions


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.values.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, "sum", (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum_(a, axes, keepdims), 1.0 / count)


def frobenius_sq(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    av = a.values
    out = (av * av).sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (2.0 * g * av,)

    return _make(out, "frobenius_sq", (a,), back)


_REDUCE = {"sum": sum_, "mean": mean, "frobenius_sq": frobenius_sq}


def reduce(op: str, a, axes=None, keepdims: bool = False) -> Tensor:
    if op not in _REDUCE:
        raise ValueError(f"unknown reduction {op!r}")
    return _REDUCE[op](a, axes, keepdims)


# ---------------------------------------------------------------- softmax family


def softmax_lastdim(a) -> Tensor:
    a = _as_tensor(a)
    x = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (a,), back)


def logsumexp_lastdim(a, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    m = a.values.max(axis=-1, keepdims=True)
    e = np.exp(a.values - m)
    s = e.sum(axis=-1, keepdims=True)
    out = np.log(s) + m
    w = e / s

    def back(g):
        if not keepdims:
            g = g[..., None]
        return (g * w,)

    return _make(out if keepdims else out[..., 0], "logsumexp", (a,), back)


def log_softmax_lastdim(a) -> Tensor:
    a = _as_tensor(a)
    return sub(a, logsumexp_lastdim(a, keepdims=True))


# ---------------------------------------------------------------- shape ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} into {tuple(shape)}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.values, axes), "transpose", (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    return _make(
        np.swapaxes(a.values, ax1, ax2), "swapaxes", (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def _is_basic_index(idx) -> bool:
    if not isinstance(idx, tuple):
        idx = (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in idx)


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    out = a.values[idx]
    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros(a.shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), "getitem", (a,), back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.values for t in ts], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, "stack", ts, back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.values for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, "concat", ts, back)


def diagonal_lastdims(a) -> Tensor:
    """Diagonal of the trailing square matrices: (..., n, n) -> (..., n)."""
    a = _as_tensor(a)
    n = a.shape[-1]
    if a.ndim < 2 or a.shape[-2] != n:
        raise ShapeError(f"diagonal needs trailing square dims, got {a.shape}")
    eye = np.eye(n, dtype=bool)

    def back(g):
        return (g[..., None] * eye,)

    return _make(np.diagonal(a.values, axis1=-2, axis2=-1).copy(), "diagonal", (a,), back)


def detach(a) -> Tensor:
    """Same values, cut from the tape."""
    return Tensor(_as_tensor(a).values.copy())


# ---------------------------------------------------------------- backward


class Tape:
    """The tensors reachable from a root, in recording (topological) order."""

    def __init__(self, tensors: list[Tensor]):
        self.tensors = tensors

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        seen: dict[int, Tensor] = {}
        stack_ = [root]
        while stack_:
            t = stack_.pop()
            if id(t) in seen:
                continue
            seen[id(t)] = t
            if t.node is not None:
                stack_.extend(p for p in t.node.parents if p.requires_grad)
        ordered = sorted(
            seen.values(), key=lambda t: (-1, 0) if t.node is None else (t.node.seq, 1)
        )
        return cls(ordered)

    @property
    def nodes(self) -> list[Node]:
        return [t.node for t in self.tensors if t.node is not None]

    def __len__(self) -> int:
        return len(self.tensors)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(param) into ``param.grad`` for every reachable parameter."""
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for t in reversed(Tape.from_root(root).tensors):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = np.array(g, dtype=np.float64) if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.parents, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            grads[k] = pg if k not in grads else grads[k] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call.  For each parameter the error is ``||a - n|| / max(||a||, ||n||, 1e-12)``
    and the maximum over parameters is returned.  Parameter values are
    restored on exit.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    zero_grad(params)
    backward(f())
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
        numeric = np.zeros(p.shape)
        flat = p.values.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2.0 * eps)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    zero_grad(params)
    return worst
