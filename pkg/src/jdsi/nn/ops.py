"""Differentiable layers (N, C, H, W) and MRI operators for the autodiff tape.

Convolutions keep activations in channels-last memory and hand back
channels-first *views*, so the logical layout stays N x C x H x W while the
3x3 kernels run as nine shifted matrix products.
"""
import warnings

import numpy as np

from .tensor import Tensor, as_tensor, make


class ShapeError(ValueError):
    pass


# --- conv / normalization / activations ----------------------------------------

def conv3x3(x, w, b=None):
    """Same-padded 3x3 cross-correlation. ``w`` is (C_out, C_in, 3, 3)."""
    x, w = as_tensor(x), as_tensor(w)
    N, C, H, W = x.shape
    Co, Ci = w.shape[:2]
    if Ci != C or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: weight {w.shape} does not match input channels {C}")
    xp = np.pad(x.value.transpose(0, 2, 3, 1), ((0, 0), (1, 1), (1, 1), (0, 0)))
    wt = np.ascontiguousarray(w.value.transpose(2, 3, 1, 0))  # (3, 3, C_in, C_out)
    out = xp[:, 0:H, 0:W, :] @ wt[0, 0]
    for dy in range(3):
        for dx in range(3):
            if dy or dx:
                out += xp[:, dy:dy + H, dx:dx + W, :] @ wt[dy, dx]
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out += b.value
        parents.append(b)

    def bw(g):
        gh = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gw = None
        if w.requires_grad:
            g2 = gh.reshape(-1, Co)
            gw = np.empty((3, 3, C, Co), dtype=gh.dtype)
            for dy in range(3):
                for dx in range(3):
                    gw[dy, dx] = xp[:, dy:dy + H, dx:dx + W, :].reshape(-1, C).T @ g2
            gw = gw.transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            # transposed conv = same-padded conv with flipped, transposed kernels
            gp = np.pad(gh, ((0, 0), (1, 1), (1, 1), (0, 0)))
            wf = np.ascontiguousarray(wt[::-1, ::-1].transpose(0, 1, 3, 2))
            gxh = gp[:, 0:H, 0:W, :] @ wf[0, 0]
            for dy in range(3):
                for dx in range(3):
                    if dy or dx:
                        gxh += gp[:, dy:dy + H, dx:dx + W, :] @ wf[dy, dx]
            gx = gxh.transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(gh.sum(axis=(0, 1, 2)))
        return grads

    return make(out.transpose(0, 3, 1, 2), parents, bw)


def _csum(a):
    """Per-channel sum over (N, H, W) of an (N, C, H, W) array.

    Channels-last memory is summed with a ones-vector product, which is
    several times faster than a strided ``sum(axis=(0, 2, 3))``.
    """
    f = a.transpose(0, 2, 3, 1)
    if not f.flags.c_contiguous:
        return a.sum(axis=(0, 2, 3))
    f = f.reshape(-1, a.shape[1])
    return np.ones(f.shape[0], dtype=f.dtype) @ f


class BNState:
    """Running statistics of one batch-norm layer (arrays are updated in place)."""

    def __init__(self, channels=None, dtype=np.float64, mean=None, var=None):
        self.mean = np.zeros(channels, dtype=dtype) if mean is None else mean
        self.var = np.ones(channels, dtype=dtype) if var is None else var


def batchnorm(x, scale, shift, state: BNState, mode="train", eps=1e-5, momentum=0.9):
    """Per-channel batch normalization.

    ``train`` normalizes by batch statistics and updates ``state`` as
    ``state = momentum * state + (1 - momentum) * batch``; ``eval`` uses
    the stored statistics.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    v = x.value
    N, C, H, W = v.shape
    m = N * H * W
    cs = (1, C, 1, 1)
    if mode == "train":
        if m < 2:
            raise ValueError("batchnorm in train mode needs at least 2 values per channel")
        mu = _csum(v) / m
        d = v - mu.reshape(cs)
        var = _csum(d * d) / m
        state.mean[...] = momentum * state.mean + (1 - momentum) * mu
        state.var[...] = momentum * state.var + (1 - momentum) * var
    elif mode == "eval":
        mu, var = state.mean.astype(v.dtype), state.var.astype(v.dtype)
        d = v - mu.reshape(cs)
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    inv = (1.0 / np.sqrt(var + eps)).astype(v.dtype, copy=False)
    xhat = d * inv.reshape(cs)
    out = xhat * scale.value.reshape(cs) + shift.value.reshape(cs)

    def bw(g):
        gs = _csum(g * xhat)
        gb = _csum(g)
        gx = None
        if x.requires_grad:
            k = (scale.value * inv).reshape(cs)
            if mode == "train":
                gx = k * (g - (gb / m).reshape(cs) - xhat * (gs / m).reshape(cs))
            else:
                gx = g * k
        return gx, gs, gb

    return make(out, (x, scale, shift), bw)


def relu(x):
    x = as_tensor(x)
    pos = x.value > 0
    return make(x.value * pos, (x,), lambda g: (g * pos,))


def softthresh(x, rho):
    """max(|x| - rho, 0) * x / |x| elementwise (complex modulus for complex x).

    A negative ``rho`` is treated as 0 (with a warning); the gradient with
    respect to ``rho`` is zero there.
    """
    x, rho = as_tensor(x), as_tensor(rho)
    r = rho.value
    if np.any(r < 0):
        warnings.warn("soft-threshold rho < 0 clamped to 0", RuntimeWarning)
    r_eff = np.maximum(r, 0)
    v = x.value
    mag = np.abs(v)
    active = mag > r_eff
    safe = np.where(mag > 0, mag, 1)
    unit = v / safe
    out = np.where(active, v - r_eff * unit, 0).astype(v.dtype, copy=False)

    def bw(g):
        gx = None
        if x.requires_grad:
            if np.iscomplexobj(v):
                # d/dz of (|z| - r) z/|z| on the active set
                k = 1 - r_eff / safe
                gx = np.where(active, k * g + (r_eff / safe) * unit * np.real(np.conj(unit) * g), 0)
            else:
                gx = g * active
        gr = None
        if rho.requires_grad:
            gr = np.where(active & (r >= 0), -np.real(np.conj(unit) * g), 0)
        return gx, gr

    return make(out, (x, rho), bw)


def maxpool2(x):
    x = as_tensor(x)
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {H}x{W}")
    blk = x.value.reshape(N, C, H // 2, 2, W // 2, 2)
    out = blk.max(axis=(3, 5))
    # route the gradient to the first maximum of each 2x2 block
    flat = blk.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    arg = flat.argmax(axis=-1)

    def bw(g):
        gf = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gf, arg[..., None], g[..., None], axis=-1)
        gx = gf.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        return (gx,)

    return make(out, (x,), bw)


def upsample2(x):
    """Nearest-neighbour 2x upsampling."""
    x = as_tensor(x)
    N, C, H, W = x.shape
    out = np.broadcast_to(x.value[:, :, :, None, :, None], (N, C, H, 2, W, 2)).reshape(N, C, 2 * H, 2 * W)
    return make(out, (x,), lambda g: (g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)),))


def concat_channels(*ts):
    ts = [as_tensor(t) for t in ts]
    sizes = np.cumsum([t.shape[1] for t in ts])[:-1]
    return make(np.concatenate([t.value for t in ts], axis=1), ts, lambda g: tuple(np.split(g, sizes, axis=1)))


# --- complex <-> channel packing -----------------------------------------------

def complex_to_channels(z):
    """(N, J, H, W) complex -> (N, 2J, H, W) real with [Re0, Im0, Re1, Im1, ...]."""
    z = as_tensor(z)
    N, J, H, W = z.shape
    v = z.value
    out = np.stack([v.real, v.imag], axis=2).reshape(N, 2 * J, H, W)

    def bw(g):
        g = g.reshape(N, J, 2, H, W)
        return (g[:, :, 0] + 1j * g[:, :, 1],)

    return make(out, (z,), bw)


def channels_to_complex(t):
    """Inverse of :func:`complex_to_channels`."""
    t = as_tensor(t)
    N, C, H, W = t.shape
    if C % 2:
        raise ShapeError(f"need an even channel count, got {C}")
    v = t.value.reshape(N, C // 2, 2, H, W)
    out = v[:, :, 0] + 1j * v[:, :, 1]

    def bw(g):
        return (np.stack([g.real, g.imag], axis=2).reshape(N, C, H, W),)

    return make(out, (t,), bw)


# --- MRI operators ---------------------------------------------------------------

def _fft2c(a):
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def _ifft2c(a):
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a, axes=(-2, -1)), norm="ortho"), axes=(-2, -1))


def fft2c(x):
    x = as_tensor(x)
    return make(_fft2c(x.value), (x,), lambda g: (_ifft2c(g),))


def ifft2c(x):
    x = as_tensor(x)
    return make(_ifft2c(x.value), (x,), lambda g: (_fft2c(g),))


def sos_normalize(z, eps_rel=1e-6):
    """Divide a coil stack (N, J, H, W) by its SoS over J.

    Pixels whose SoS falls below ``eps_rel`` times the per-sample maximum
    are set to zero; the foreground selection is treated as constant.
    """
    z = as_tensor(z)
    v = z.value
    s = np.sqrt(np.sum(v.real**2 + v.imag**2, axis=1, keepdims=True))
    peak = s.max(axis=(2, 3), keepdims=True)
    fg = (s >= eps_rel * peak) & (peak > 0)
    inv = np.where(fg, 1.0 / np.where(fg, s, 1), 0).astype(s.dtype)
    out = v * inv

    def bw(g):
        a = np.sum(np.real(np.conj(g) * v), axis=1, keepdims=True)
        return (g * inv - v * (a * inv**3),)

    return make(out, (z,), bw)


def dc_blend(k, y, lam, omega):
    """Eq.-style k-space blend: on ``omega`` (k + lam*y)/(1 + lam), else k."""
    k, lam = as_tensor(k), as_tensor(lam)
    yv = np.asarray(y)
    lv = lam.value
    out = np.where(omega, (k.value + lv * yv) / (1 + lv), k.value)

    def bw(g):
        gk = np.where(omega, g / (1 + lv), g)
        gl = None
        if lam.requires_grad:
            gl = np.real(np.sum(np.where(omega, np.conj(g) * (yv - k.value), 0))) / (1 + lv) ** 2
        return gk, gl

    return make(out, (k, lam), bw)
