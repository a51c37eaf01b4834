"""Small reverse-mode autodiff over numpy arrays.

Ops accept ``Tensor`` or plain arrays. When no argument requires a
gradient the op returns a plain ``ndarray`` and records nothing, so the
same network code serves both training and graph-free inference.
"""

import numpy as np

from .errors import ShapeError


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients into every ancestor that requires them.

        Nodes are visited once each, in reverse topological order.
        """
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)
                if node.parents:
                    # interior gradients are not needed after propagation
                    node.grad = None if node is not self else node.grad


def value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def needs_grad(*xs):
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _acc(node, g):
    if isinstance(node, Tensor) and node.requires_grad:
        node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(out, parents, fn):
    return Tensor(out, requires_grad=True, parents=tuple(parents), backward_fn=fn)


def stop_gradient(x):
    """Same values, no path back to ``x``."""
    return value(x).copy()


def add(a, b):
    va, vb = value(a), value(b)
    out = va + vb
    if not needs_grad(a, b):
        return out

    def fn(g):
        _acc(a, _unbroadcast(g, va.shape))
        _acc(b, _unbroadcast(g, vb.shape))

    return _node(out, (a, b), fn)


def sub(a, b):
    va, vb = value(a), value(b)
    out = va - vb
    if not needs_grad(a, b):
        return out

    def fn(g):
        _acc(a, _unbroadcast(g, va.shape))
        _acc(b, -_unbroadcast(g, vb.shape))

    return _node(out, (a, b), fn)


def mul(a, b):
    va, vb = value(a), value(b)
    out = va * vb
    if not needs_grad(a, b):
        return out

    def fn(g):
        _acc(a, _unbroadcast(g * vb, va.shape))
        _acc(b, _unbroadcast(g * va, vb.shape))

    return _node(out, (a, b), fn)


def matmul(x, w):
    """``x (..., a) @ w (a, b)``."""
    vx, vw = value(x), value(w)
    if vw.ndim != 2 or vx.shape[-1] != vw.shape[0]:
        raise ShapeError(f"cannot multiply {vx.shape} by {vw.shape}")
    out = vx @ vw
    if not needs_grad(x, w):
        return out

    def fn(g):
        _acc(x, g @ vw.T)
        if isinstance(w, Tensor) and w.requires_grad:
            _acc(w, vx.reshape(-1, vx.shape[-1]).T @ g.reshape(-1, g.shape[-1]))

    return _node(out, (x, w), fn)


def relu(x):
    vx = value(x)
    out = np.maximum(vx, 0.0)
    if not needs_grad(x):
        return out
    return _node(out, (x,), lambda g: _acc(x, g * (vx > 0.0)))


def sigmoid(x):
    vx = value(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * vx))
    if not needs_grad(x):
        return out
    return _node(out, (x,), lambda g: _acc(x, g * out * (1.0 - out)))


def tanh(x):
    out = np.tanh(value(x))
    if not needs_grad(x):
        return out
    return _node(out, (x,), lambda g: _acc(x, g * (1.0 - out * out)))


def concat(xs, axis=-1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not needs_grad(*xs):
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def fn(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            _acc(x, np.take(g, np.arange(lo, hi), axis=axis))

    return _node(out, xs, fn)


def stack(xs, axis=0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not needs_grad(*xs):
        return out

    def fn(g):
        for i, x in enumerate(xs):
            _acc(x, np.take(g, i, axis=axis))

    return _node(out, xs, fn)


def reshape(x, shape):
    vx = value(x)
    out = vx.reshape(shape)
    if not needs_grad(x):
        return out
    return _node(out, (x,), lambda g: _acc(x, g.reshape(vx.shape)))


def take(x, idx, axis=0):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    vx = value(x)
    idx = np.asarray(idx)
    out = np.take(vx, idx, axis=axis)
    if not needs_grad(x):
        return out

    def fn(g):
        full = np.zeros_like(vx)
        moved = np.moveaxis(full, axis, 0)
        if idx.ndim == 0:
            moved[idx] += g
        else:
            np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _acc(x, full)

    return _node(out, (x,), fn)


def scale(x, s):
    return mul(x, float(s))


def total(x):
    vx = value(x)
    out = np.asarray(vx.sum())
    if not needs_grad(x):
        return out
    return _node(out, (x,), lambda g: _acc(x, np.broadcast_to(g, vx.shape).copy()))


def custom(out, inputs, vjps):
    """Node with user-supplied value and one vector-Jacobian product per input."""
    if not needs_grad(*inputs):
        return np.asarray(out)

    def fn(g):
        for x, vjp in zip(inputs, vjps):
            if isinstance(x, Tensor) and x.requires_grad:
                _acc(x, vjp(g))

    return _node(out, inputs, fn)
