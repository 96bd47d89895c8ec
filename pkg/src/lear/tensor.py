"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every array in the model is a :class:`Tensor`.  Operations record their
parents and a backward closure when gradient tracking is enabled and at
least one input requires a gradient; :func:`backward` walks that tape in
reverse topological order.

Broadcasting is explicit.  Elementwise binary ops accept identical shapes
or a *bias* operand whose shape is a suffix of the other's (``(C, d)``
against ``(B, n, C, d)``).  Anything else goes through :func:`broadcast_to`.
``matmul`` broadcasts leading batch dimensions the way ``numpy.matmul`` does.

Randomness uses numpy's PCG64 generator (``numpy.random.default_rng``);
see :func:`make_rng`.
"""
from __future__ import annotations

import contextlib
import contextvars
from collections import Counter
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DegenerateError, ShapeError

DTYPE = np.float64

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_op_counter: contextvars.ContextVar["OpCounter | None"] = contextvars.ContextVar("op_counter", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "version", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.version = 0
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        _init_raw(out, self.data)
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, values: np.ndarray) -> None:
        """Overwrite the values in place and bump ``version``."""
        values = np.asarray(values, dtype=DTYPE)
        if values.shape != self.data.shape:
            raise ShapeError(f"cannot assign {values.shape} into {self.data.shape}")
        self.data[...] = values
        self.version += 1

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a tensor is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _init_raw(t: Tensor, arr: np.ndarray) -> None:
    t.data = arr
    t.requires_grad = False
    t.grad = None
    t.version = 0
    t._parents = ()
    t._backward = None


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap a forward result and its backward closure as a graph node.

    ``backward(g)`` receives the upstream gradient (same shape as ``data``)
    and returns one gradient (or ``None``) per parent.
    """
    out = Tensor.__new__(Tensor)
    _init_raw(out, np.asarray(data, dtype=DTYPE))
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class OpCounter:
    """Counts multiply-accumulates and named events inside a :func:`count_ops` block.

    ``macs`` covers matrix products (``k`` MACs per output element) and
    tensor-tensor elementwise products (one per element), forward and
    backward.  Scalar scaling, additions and transcendental functions are
    not counted.
    """

    def __init__(self):
        self.macs = 0
        self.events: Counter[str] = Counter()

    def __repr__(self) -> str:
        return f"OpCounter(macs={self.macs}, events={dict(self.events)})"


@contextlib.contextmanager
def count_ops():
    counter = OpCounter()
    token = _op_counter.set(counter)
    try:
        yield counter
    finally:
        _op_counter.reset(token)


def _count(macs: int) -> None:
    counter = _op_counter.get()
    if counter is not None:
        counter.macs += int(macs)


def record_event(name: str, amount: int = 1) -> None:
    counter = _op_counter.get()
    if counter is not None:
        counter.events[name] += amount


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams."""
    if not 0 <= int(seed) < 2**64:
        raise ContractError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(int(seed))


# ---------------------------------------------------------------------------
# shape helpers


def _binary_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"{op}: incompatible shapes {a} and {b} (only suffix bias-broadcast is implicit)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape(a.shape, b.shape, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shape(a.shape, b.shape, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return make_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    shape = _binary_shape(a.shape, b.shape, "mul")
    _count(int(np.prod(shape)))

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            _count(g.size)
            ga = _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            _count(g.size)
            gb = _unbroadcast(g * a.data, b.shape)
        return ga, gb

    return make_op(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(x.data * c, (x,), lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_op(x.data + c, (x,), lambda g: (g,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_op(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("log of a non-positive value")
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    z = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_op(y, (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return make_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions and structure


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op(y, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last (feature) axis."""
    return sum(x, axis=-1)


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)
    return make_op(y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)
    return make_op(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return make_op(y, (x,), lambda g: (_unbroadcast(g, x.shape),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of an empty sequence")
    try:
        y = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_op(y, xs, backward)


def getitem(x: Tensor, index) -> Tensor:
    y = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_op(np.array(y), (x,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"ids out of range for a table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make_op(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    inner = a.shape[-1]
    y = np.matmul(a.data, b.data)
    macs = int(np.prod(y.shape)) * inner
    _count(macs)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            _count(macs)
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            _count(macs)
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(y, (a, b), backward)


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; ``mask`` (broadcastable to ``x``) marks valid entries.

    Masked entries get probability exactly 0.  A slice with no valid entry
    raises :class:`DegenerateError`.
    """
    xd = x.data
    if mask is None:
        m = xd.max(axis=axis, keepdims=True)
        e = np.exp(xd - m)
    else:
        try:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        except ValueError:
            raise ShapeError(f"softmax: mask of shape {np.shape(mask)} does not match {xd.shape}") from None
        if not np.all(mask.any(axis=axis)):
            raise DegenerateError("softmax over a fully masked slice")
        masked = np.where(mask, xd, -np.inf)
        m = masked.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(masked - m), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must be ({d},), got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_op(y, (x, gamma, beta), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# backward pass


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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring a gradient."""
    if loss.shape != () and loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
