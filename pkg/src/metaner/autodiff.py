"""Small reverse-mode autodiff over numpy arrays, plus Adam and plain descent.

Every op follows numpy broadcasting, so the same model code runs on a single
parameter set or on a stack of per-task parameter sets with a leading task
axis. Gradients of broadcast operands are summed back to the operand shape.

The tape is single-use and first-order only: ``backward`` returns plain
arrays, never graph nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ContractViolation, NumericalError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "name",
                 "requires_grad", "consumed")

    def __init__(self, data, parents=(), backward_fn=None, op="const",
                 name=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name
        self.requires_grad = requires_grad
        self.consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractViolation("division by a graph node is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def param(data, name):
    """Trainable leaf. Its gradient is reported under ``name``."""
    return Tensor(np.array(data, dtype=np.float64), name=name, op="param",
                  requires_grad=True)


def constant(data):
    return Tensor(data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, fn, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, parents if needs else (), fn if needs else None, op,
                  requires_grad=needs)


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return _node(a.data + b.data, (a, b), fn, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)
    return _node(a.data * b.data, (a, b), fn, "mul")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a, floor=None):
    """Natural log. With ``floor``, inputs below it are clamped and get no gradient."""
    x = a.data
    if floor is not None:
        clamped = x < floor
        x = np.where(clamped, floor, x)

        def fn(g):
            return (np.where(clamped, 0.0, g / x),)
    else:
        def fn(g):
            return (g / x,)
    return _node(np.log(x), (a,), fn, "log")


def gelu(a):
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def fn(g):
        return (g * (cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)),)
    return _node(x * cdf, (a,), fn, "gelu")


# ---------------------------------------------------------------- structural

def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),),
                 "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def embed(table, ids):
    """Row gather ``table[ids]``.

    A 3-D table is a stack of per-task tables; ``ids`` then carries the task
    axis first and each task reads its own table.
    """
    ids = np.asarray(ids)
    if table.ndim == 2:
        out = table.data[ids]
    elif table.ndim == 3:
        task = np.arange(table.shape[0]).reshape((-1,) + (1,) * (ids.ndim - 1))
        out = table.data[task, ids]
    else:
        raise ContractViolation(f"embedding table must be 2-D or 3-D, got {table.shape}")

    def fn(g):
        full = np.zeros_like(table.data)
        if table.ndim == 2:
            np.add.at(full, ids, g)
        else:
            np.add.at(full, (np.broadcast_to(task, ids.shape), ids), g)
        return (full,)
    return _node(out, (table,), fn, "embed")


def pick(a, index):
    """``a[..., index[...]]`` along the last axis."""
    index = np.asarray(index)[..., None]
    out = np.take_along_axis(a.data, index, axis=-1)[..., 0]

    def fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, index, g[..., None], axis=-1)
        return (full,)
    return _node(out, (a,), fn, "pick")


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), fn, "sum")


def tmean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) / count


def tmax(a, axis=-1, where=None):
    """Max along one axis; the subgradient goes to the first maximal element.

    ``where`` restricts the candidates. Every reduced row needs at least one.
    """
    x = a.data
    if where is not None:
        where = np.broadcast_to(np.asarray(where, dtype=bool), x.shape)
        if not where.any(axis=axis).all():
            raise ContractViolation("max over a row with no eligible elements")
        x = np.where(where, x, -np.inf)
    idx = np.expand_dims(np.argmax(x, axis=axis), axis)
    out = np.take_along_axis(x, idx, axis=axis)

    def fn(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)
    return _node(np.squeeze(out, axis), (a,), fn, "max")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)
    return _node(a.data @ b.data, (a, b), fn, "matmul")


def softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _node(y, (a,), fn, "softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    gain, bias = as_tensor(gain), as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def fn(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape)
    return _node(xhat * gain.data + bias.data, (a, gain, bias), fn, "layer_norm")


# ---------------------------------------------------------------- backward

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _first_bad(order, attr):
    for node in order:
        value = getattr(node, attr)
        if value is not None and not np.all(np.isfinite(value)):
            return node
    return None


def backward(loss):
    """Gradients of a scalar ``loss`` w.r.t. every named trainable leaf.

    Returns ``{name: ndarray}``. Constants and frozen parameters (built with
    ``constant``) never appear.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1 or loss.ndim != 0:
        raise ContractViolation("backward needs a 0-d scalar loss")
    if loss.consumed:
        raise ContractViolation("this tape was already differentiated; it is single-use")
    order = _topo(loss)
    if not np.isfinite(loss.data):
        bad = _first_bad(order, "data")
        raise NumericalError(f"non-finite value first produced by {bad!r}")
    for node in order:
        node.grad = None
        node.consumed = True
    loss.grad = np.ones(())
    grads = {}
    for node in reversed(order):
        if node.backward_fn is None:
            if node.name is not None and node.requires_grad:
                if node.name in grads:
                    raise ContractViolation(f"parameter {node.name!r} bound twice")
                grads[node.name] = (np.zeros_like(node.data) if node.grad is None
                                    else node.grad)
            continue
        if node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if parent.requires_grad:
                parent.grad = g if parent.grad is None else parent.grad + g
    for node in order:
        if node.grad is not None and not np.all(np.isfinite(node.grad)):
            bad = _first_bad(reversed(order), "grad")
            raise NumericalError(f"non-finite gradient first produced at {bad!r}")
    return grads


# ---------------------------------------------------------------- optimizers

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def _check_shapes(params, grads):
    for name, g in grads.items():
        if name not in params:
            raise ContractViolation(f"gradient for unknown parameter {name!r}")
        if np.shape(params[name]) != np.shape(g):
            raise ContractViolation(
                f"shape mismatch for {name!r}: {np.shape(params[name])} vs {np.shape(g)}")


def sgd_step(params, grads, lr):
    """theta <- theta - lr * g for every parameter with a gradient."""
    _check_shapes(params, grads)
    out = dict(params)
    for name, g in grads.items():
        out[name] = params[name] - lr * g
    return out


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam step. Returns new params; ``state`` is updated."""
    _check_shapes(params, grads)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    out = dict(params)
    for name, g in grads.items():
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        elif m.shape != g.shape:
            raise ContractViolation(f"Adam moment shape mismatch for {name!r}")
        rows = _live_rows(g, m, v)
        if rows is None:
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            state.first_moment[name] = m
            state.second_moment[name] = v
            out[name] = params[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
            continue
        # rows with zero gradient and zero moments would not move at all
        shape = g.shape
        g2, m2, v2 = g.reshape(-1, shape[-1]), m.reshape(-1, shape[-1]), v.reshape(-1, shape[-1])
        p2 = np.array(params[name], dtype=np.float64).reshape(-1, shape[-1])
        m2, v2 = m2.copy(), v2.copy()
        gr = g2[rows]
        mr = b1 * m2[rows] + (1.0 - b1) * gr
        vr = b2 * v2[rows] + (1.0 - b2) * (gr * gr)
        m2[rows], v2[rows] = mr, vr
        p2[rows] = p2[rows] - lr * (mr / bc1) / (np.sqrt(vr / bc2) + state.epsilon)
        state.first_moment[name] = m2.reshape(shape)
        state.second_moment[name] = v2.reshape(shape)
        out[name] = p2.reshape(shape)
    return out


def _live_rows(g, m, v):
    """Indices of last-axis rows that can change, or None to update densely."""
    if g.ndim < 2 or g.size < 4096:
        return None
    flat = g.reshape(-1, g.shape[-1])
    live = flat.any(axis=1) | m.reshape(flat.shape).any(axis=1) | v.reshape(flat.shape).any(axis=1)
    if live.mean() > 0.5:
        return None
    return np.flatnonzero(live)
