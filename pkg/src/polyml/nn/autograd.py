"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it only when some
input requires a gradient, so the same model code runs as plain numpy at
inference time and builds a graph during training. The module-level
functions accept ndarrays or Tensors.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the Tensor

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping ----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return self.transpose()

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def _accum(self, g):
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=float)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(i, keepdims=True)
    return g


def _make(data, parents, backward):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, True, parents, backward)


# --- elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accum(_unbroadcast(g / b.data, a.shape))
        b._accum(_unbroadcast(-g * a.data / b.data**2, b.shape))

    return _make(a.data / b.data, (a, b), back)


def power(a, p: float):
    a = as_tensor(a)
    return _make(a.data**p, (a,), lambda g: a._accum(g * p * a.data ** (p - 1)))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: a._accum(g * 0.5 / out))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accum(g * (1.0 - out**2)))


def _np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _np_sigmoid(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask))


def softplus(a):
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: a._accum(g * _np_sigmoid(a.data)))


def identity(a):
    return as_tensor(a)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        a._accum(_unbroadcast(np.where(cond, g, 0.0), a.shape))
        b._accum(_unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(np.where(cond, a.data, b.data), (a, b), back)


# --- reductions and shape ------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def tmax(a, axis=None, keepdims=False):
    """Max; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    if axis is None:
        flat = a.data.reshape(-1)
        k = int(np.argmax(flat))

        def back_all(g):
            z = np.zeros(flat.size)
            z[k] = g
            a._accum(z.reshape(a.shape))

        out = flat[k]
        return _make(np.array(out) if not keepdims else np.full([1] * a.ndim, out), (a,), back_all)
    axes = tuple(np.atleast_1d(axis) % a.ndim)
    # move reduced axes last and flatten them to take a single argmax
    keep = [i for i in range(a.ndim) if i not in axes]
    moved = np.transpose(a.data, keep + list(axes))
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    k = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, k[..., None], -1)[..., 0]

    def back(g):
        if keepdims:
            g = g.reshape(lead)
        z = np.zeros_like(flat)
        np.put_along_axis(z, k[..., None], g[..., None], -1)
        z = z.reshape(moved.shape)
        a._accum(np.transpose(z, np.argsort(keep + list(axes))))

    if keepdims:
        out = np.expand_dims(out, axes)
    return _make(out, (a,), back)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: a._accum(np.transpose(g, inv)))


def swapaxes(a, i, j):
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a, idx):
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        a._accum(z)

    return _make(a.data[idx], (a,), back)


def concat(items, axis=0):
    items = [as_tensor(t) for t in items]
    sizes = np.cumsum([t.shape[axis] for t in items])[:-1]

    def back(g):
        for t, part in zip(items, np.split(g, sizes, axis=axis)):
            t._accum(part)

    return _make(np.concatenate([t.data for t in items], axis=axis), items, back)


def stack(items, axis=0):
    items = [as_tensor(t) for t in items]

    def back(g):
        for i, t in enumerate(items):
            t._accum(np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in items], axis=axis), items, back)


def pad(a, width):
    """Zero padding; ``width`` as for :func:`numpy.pad`."""
    a = as_tensor(a)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(width, a.shape))
    return _make(np.pad(a.data, width), (a,), lambda g: a._accum(g[sl]))


# --- linear algebra and softmax -------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def back(g):
        a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), back)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), back)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def back(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), back)


# --- driving ------------------------------------------------------------------


def value_and_grad(fn, params: dict, *args, **kwargs):
    """Evaluate scalar ``fn(tensor_params, *args)``; return (value, grads dict)."""
    tp = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    out = fn(tp, *args, **kwargs)
    if not isinstance(out, Tensor) or not out.requires_grad:
        return float(value(out)), {k: np.zeros_like(v) for k, v in params.items()}
    out.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tp.items()}
    return float(out.data), grads


def numerical_grad(fn, params: dict, eps: float = 1e-6, *args, **kwargs) -> dict:
    """Central finite differences of scalar ``fn(params, *args)`` (plain arrays)."""
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            old = v[i]
            v[i] = old + eps
            fp = float(value(fn(params, *args, **kwargs)))
            v[i] = old - eps
            fm = float(value(fn(params, *args, **kwargs)))
            v[i] = old
            g[i] = (fp - fm) / (2 * eps)
        out[k] = g
    return out
