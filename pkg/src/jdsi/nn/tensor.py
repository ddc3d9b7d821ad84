"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the op that produced it (its parents plus a
closure mapping the upstream gradient to parent gradients). :func:`backward`
walks that graph in reverse topological order.

Complex values are supported. For a real loss L and complex z the stored
gradient is dL/dRe(z) + 1j * dL/dIm(z); under that convention a linear
map A back-propagates as A^H g and z -> a*z as conj(a) * g.
"""
import contextlib

import numpy as np


class UsageError(RuntimeError):
    pass


_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, finite differences)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled():
    return _GRAD_ENABLED[-1]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return self.backward_fn is None

    def numpy(self):
        return self.value

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(as_tensor(o)))

    def __rsub__(self, o):
        return add(as_tensor(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make(value, parents, backward_fn):
    """Create an op output. ``backward_fn(g)`` returns one gradient per parent
    (``None`` for parents that need none)."""
    out = Tensor(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g, shape, dtype):
    """Sum ``g`` down to ``shape`` and drop the imaginary part for real targets."""
    if g.shape != shape:
        nd = g.ndim - len(shape)
        if nd > 0:
            g = g.sum(axis=tuple(range(nd)))
        axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if not np.iscomplexobj(np.empty(0, dtype)) and np.iscomplexobj(g):
        g = g.real
    return g.astype(dtype, copy=False)


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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _released(g):
    raise UsageError("graph already released: backward() ran on it before")


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Intermediate nodes are released afterwards, so a second call on the
    same graph raises :class:`UsageError`.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward() needs a Tensor produced by recorded ops")
    if loss.backward_fn is None and not loss.requires_grad:
        raise UsageError("no forward tape: the loss was not computed from any tensor requiring grad")
    if grad is None:
        if loss.value.size != 1:
            raise UsageError("backward() without an explicit gradient needs a scalar loss")
        grad = np.ones_like(loss.value)
    grads = {id(loss): np.asarray(grad)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgs = node.backward_fn(g)
        for p, pg in zip(node.parents, pgs):
            if pg is None or not p.requires_grad:
                continue
            pg = _unbroadcast(pg, p.shape, p.dtype)
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg
        node.parents = ()
        node.backward_fn = _released


# --- elementwise algebra -----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.value + b.value, (a, b), lambda g: (g, g))


def neg(a):
    return make(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        ga = g * np.conj(bv) if a.requires_grad else None
        gb = g * np.conj(av) if b.requires_grad else None
        return ga, gb

    return make(av * bv, (a, b), bw)


def conj(a):
    return make(np.conj(a.value), (a,), lambda g: (np.conj(g),))


def real(a):
    return make(a.value.real.copy(), (a,), lambda g: (g,))


def abs2(a):
    """|a|^2 elementwise (real output)."""
    v = a.value
    return make((v.real**2 + v.imag**2) if np.iscomplexobj(v) else v * v, (a,), lambda g: (2 * g * v,))


def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stack(ts, axis=0):
    ts = [as_tensor(t) for t in ts]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make(np.stack([t.value for t in ts], axis=axis), ts, bw)


def clamp_min(a, lo=0.0):
    v = a.value
    keep = v >= lo
    return make(np.maximum(v, lo), (a,), lambda g: (g * keep,))
