"""Complex 2D array primitives shared by every other module.

All transforms act on the last two axes, so a single image (H, W), a coil
stack (J, H, W) or a batch of stacks (N, J, H, W) go through the same call.
"""
import hashlib

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an array contains NaN/Inf or has an unusable shape."""


def _check_finite(a, name="input"):
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")


def fft2c(img):
    """Centered, unitary 2D FFT over the last two axes.

    DC ends up at index (H//2, W//2), which is where the ACS block lives.
    """
    img = np.asarray(img)
    _check_finite(img)
    x = np.fft.ifftshift(img, axes=(-2, -1))
    x = np.fft.fft2(x, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(ksp):
    """Inverse of :func:`fft2c` (and also its adjoint)."""
    ksp = np.asarray(ksp)
    _check_finite(ksp)
    x = np.fft.ifftshift(ksp, axes=(-2, -1))
    x = np.fft.ifft2(x, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def sos(stack, axis=-3):
    """Root sum of squares over the coil axis (real, non-negative)."""
    stack = np.asarray(stack)
    _check_finite(stack)
    if stack.ndim < 3:
        raise InvalidInputError(f"expected a coil stack (..., J, H, W), got shape {stack.shape}")
    return np.sqrt(np.sum(np.abs(stack) ** 2, axis=axis))


def inner(a, b):
    """<a, b> = sum(conj(a) * b) over all entries."""
    return np.vdot(np.asarray(a).ravel(), np.asarray(b).ravel())


def rng(seed, tag=""):
    """Counter-based generator keyed by ``(seed, tag)``.

    Different tags give independent Philox streams, so masks, phantoms and
    network weights never share random draws even when seeded identically.
    """
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64).copy()
    return np.random.Generator(np.random.Philox(key=key))
