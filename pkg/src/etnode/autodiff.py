"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a :class:`Node`. When a :class:`Tape` is active and at least
one input requires a gradient, the op appends itself to the tape together with
a local backward rule. ``backward`` then sweeps the tape once in reverse.

    >>> x = param(np.array(3.0))
    >>> with Tape() as tape:
    ...     loss = square(x)
    >>> backward(tape, loss)[x]
    array(6.)

Broadcasting follows numpy's rules (scalar, row/column vectors and leading
batch axes); the gradient of a broadcast operand is summed back to its shape.
"""
from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, OracleError, ShapeError

DTYPE = np.float64

_debug = os.environ.get("ETNODE_DEBUG", "") not in ("", "0")
_tapes: list[Tape | None] = []


def set_debug(flag: bool) -> None:
    """Enable post-op finiteness checks (raises NumericError on NaN/Inf)."""
    global _debug
    _debug = bool(flag)


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name", "__weakref__")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


class Tape:
    """Ordered record of differentiable nodes. Parents always precede children."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _tapes.append(self)
        return self

    def __exit__(self, *exc):
        _tapes.pop()
        return False

    def __len__(self):
        return len(self.nodes)


@contextmanager
def no_grad():
    """Suspend recording inside an enclosing tape."""
    _tapes.append(None)
    try:
        yield
    finally:
        _tapes.pop()


def _as_array(data) -> np.ndarray:
    arr = np.array(data, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value in input tensor")
    return arr


def param(data, name=None) -> Node:
    """Leaf that receives a gradient."""
    return Node(_as_array(data), requires_grad=True, name=name)


def constant(data, name=None) -> Node:
    return Node(_as_array(data), name=name)


def _lift(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=DTYPE))


def _record(value, parents, backward_fn, op) -> Node:
    if _debug and not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite output from {op}")
    tape = _tapes[-1] if _tapes else None
    if tape is not None and any(p.requires_grad for p in parents):
        node = Node(value, parents, backward_fn, True, op)
        tape.nodes.append(node)
        return node
    return Node(value, name=op)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def scalar_mul(a, c: float) -> Node:
    a = _lift(a)
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,), "scalar_mul")


def square(a) -> Node:
    a = _lift(a)
    av = a.value
    return _record(av * av, (a,), lambda g: (2.0 * av * g,), "square")


def _expit(x):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a) -> Node:
    a = _lift(a)
    out = _expit(a.value)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Node:
    a = _lift(a)
    out = np.tanh(a.value)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Node:
    a = _lift(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Node:
    a = _lift(a)
    av = a.value
    if np.any(av <= 0):
        raise NumericError("log of non-positive value")
    return _record(np.log(av), (a,), lambda g: (g / av,), "log")


def softplus(a) -> Node:
    a = _lift(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    return _record(out, (a,), lambda g: (g * _expit(x),), "softplus")


# ----------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    return axis + ndim if axis < 0 else axis


def sum(a, axis=None, keepdims=False) -> Node:  # noqa: A001 - mirrors numpy
    a = _lift(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(out, dtype=DTYPE), (a,), back, "sum")


def mean(a, axis=None) -> Node:
    a = _lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scalar_mul(sum(a, axis), 1.0 / count)


def softmax(a, axis=-1) -> Node:
    a = _lift(a)
    x = a.value
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), back, "softmax")


# ----------------------------------------------------------------- linear algebra


def matmul(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from None
    av, bv = a.value, b.value

    def back(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(out, (a, b), back, "matmul")


def affine(weight, x, bias) -> Node:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    weight, x, bias = _lift(weight), _lift(x), _lift(bias)
    W, xv = weight.value, x.value
    if W.ndim != 2 or xv.shape[-1] != W.shape[1] or bias.shape != (W.shape[0],):
        raise ShapeError(f"affine: weight {W.shape}, input {xv.shape}, bias {bias.shape}")
    out = xv @ W.T + bias.value

    def back(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = xv.reshape(-1, W.shape[1])
        return g2.T @ x2, g @ W, g2.sum(axis=0)

    return _record(out, (weight, x, bias), back, "affine")


def einsum(subscripts: str, a, b) -> Node:
    """Two-operand einsum. Every index must occur at most once per operand."""
    a, b = _lift(a), _lift(b)
    lhs, out_idx = subscripts.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for idx in (ia, ib, out_idx):
        if len(set(idx)) != len(idx) or "." in idx:
            raise ContractError(f"unsupported einsum subscripts {subscripts!r}")
    if not set(ia) <= set(ib) | set(out_idx) or not set(ib) <= set(ia) | set(out_idx):
        raise ContractError(f"einsum index summed inside one operand: {subscripts!r}")
    av, bv = a.value, b.value
    try:
        out = np.einsum(subscripts, av, bv)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts}: {av.shape}, {bv.shape}: {exc}") from None
    ga_spec = f"{out_idx},{ib}->{ia}"
    gb_spec = f"{out_idx},{ia}->{ib}"

    def back(g):
        return np.einsum(ga_spec, g, bv), np.einsum(gb_spec, g, av)

    return _record(out, (a, b), back, "einsum")


# ----------------------------------------------------------------- structure


def reshape(a, shape) -> Node:
    a = _lift(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes) -> Node:
    a = _lift(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.value.ndim)):
        raise ShapeError(f"bad axes {axes} for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _record(a.value.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def take(a, index) -> Node:
    """Basic or advanced indexing (the ``slice`` op)."""
    a = _lift(a)
    shape = a.shape
    out = np.array(a.value[index])

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice)) or i is Ellipsis or i is None for i in parts)

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(out, (a,), back, "slice")


def concat(nodes: Sequence, axis=0) -> Node:
    nodes = [_lift(n) for n in nodes]
    if not nodes:
        raise ContractError("concat of nothing")
    ndim = nodes[0].value.ndim
    ax = _norm_axis(axis, ndim)
    for n in nodes[1:]:
        if n.value.ndim != ndim or n.shape[:ax] + n.shape[ax + 1:] != nodes[0].shape[:ax] + nodes[0].shape[ax + 1:]:
            raise ShapeError(f"concat: {nodes[0].shape} vs {n.shape} along axis {axis}")
    out = np.concatenate([n.value for n in nodes], axis=ax)
    bounds = np.cumsum([n.shape[ax] for n in nodes])[:-1]
    return _record(out, tuple(nodes), lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def stack(nodes: Sequence, axis=0) -> Node:
    nodes = [_lift(n) for n in nodes]
    parts = [reshape(n, n.shape[:axis] + (1,) + n.shape[axis:]) for n in nodes]
    return concat(parts, axis=axis)


# ----------------------------------------------------------------- backward


def backward(tape: Tape, loss: Node) -> dict[Node, np.ndarray]:
    """Reverse sweep. Returns gradients for every leaf that requires one.

    Intermediate nodes on the tape also get their ``grad`` populated.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Node] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if parent.backward_fn is None:
                leaves[key] = parent
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    out = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key]
        out[leaf] = grads[key]
    if loss.backward_fn is None and loss.requires_grad:
        loss.grad = np.ones_like(loss.value)
        out[loss] = loss.grad
    return out


def grad_check(f: Callable[[], Node], params: Iterable[Node], eps: float = 1e-6) -> float:
    """Max over all entries of ``|autodiff - central diff| / max(1, |central diff|)``.

    ``f`` rebuilds the scalar from ``params`` on every call; any randomness
    inside it must be frozen by the caller.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss)
    with no_grad():
        base = float(f().value)
        if float(f().value) != base or float(loss.value) != base:
            raise OracleError("function changed between identical evaluations")
        worst = 0.0
        for p in params:
            p.value = np.array(p.value, order="C")
            analytic = grads.get(p, np.zeros_like(p.value))
            flat = p.value.reshape(-1)
            ana = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().value)
                flat[i] = orig - eps
                down = float(f().value)
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                worst = max(worst, abs(ana[i] - numeric) / max(1.0, abs(numeric)))
    return worst
