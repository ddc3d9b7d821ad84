"""Parameter storage, Xavier initialization and Adam."""
import numpy as np

from ..numerics import rng
from .tensor import Tensor


def xavier_init(shape, seed, tag="", dtype=np.float64):
    """Glorot-uniform sample in +-sqrt(6 / (fan_in + fan_out)).

    For conv weights (C_out, C_in, kh, kw) the receptive field size
    multiplies both fans.
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise ValueError("xavier_init needs at least a 2D shape")
    rf = int(np.prod(shape[2:])) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * rf, shape[0] * rf
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng(seed, f"xavier:{tag}").uniform(-bound, bound, size=shape).astype(dtype)


class ParamStore:
    """Named trainable tensors, non-trainable buffers and per-parameter Adam state.

    ``nonneg`` lists parameters clamped at 0 after every update.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.buffers = {}
        self.adam = {}
        self.nonneg = set()

    def add(self, name, value, nonneg=False):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        if nonneg:
            self.nonneg.add(name)
        return t

    def add_buffer(self, name, value):
        self.buffers[name] = np.asarray(value, dtype=self.dtype)
        return self.buffers[name]

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def count(self):
        return int(sum(t.value.size for t in self.params.values()))

    def state(self, name):
        """(m, v, t) Adam state for one parameter, created lazily."""
        if name not in self.adam:
            p = self.params[name].value
            self.adam[name] = [np.zeros_like(p), np.zeros_like(p), 0]
        return self.adam[name]

    def astype(self, dtype):
        """Copy of the store with parameters, buffers and moments cast to ``dtype``."""
        out = ParamStore(dtype)
        for k, t in self.params.items():
            out.add(k, t.value, nonneg=k in self.nonneg)
        for k, b in self.buffers.items():
            out.add_buffer(k, b)
        for k, (m, v, t) in self.adam.items():
            out.adam[k] = [m.astype(dtype), v.astype(dtype), t]
        return out


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of every parameter that has a gradient."""
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        st = store.state(name)
        m, v, t = st
        t += 1
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        p.value = (p.value - lr * mhat / (np.sqrt(vhat) + eps)).astype(store.dtype, copy=False)
        if name in store.nonneg:
            p.value = np.maximum(p.value, 0).astype(store.dtype, copy=False)
        st[2] = t
