"""Sensitivity-map estimators.

Three producers, all returning unit-SoS :class:`~jdsi.mri.SenseMaps`:

* :func:`gt_maps` divides fully sampled coil images by their SoS image,
* :func:`acs_lowres_maps` does the same on a tapered ACS-only crop,
* :func:`fit_poly_maps` / :func:`eval_poly_maps` fit smooth Chebyshev
  polynomial maps to measured k-space given an image estimate (the map
  update used by :func:`jdsi.recon.jsense`).
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev

from .mri import SamplingMask, SenseMaps, _omega
from .numerics import fft2c, ifft2c, sos

EPS_REL = 1e-6


class CalibrationError(ValueError):
    """Maps cannot be estimated (empty foreground, no ACS, degenerate fit)."""


def normalize_maps(coil_images, eps_rel=EPS_REL):
    """dSoS: divide coil images by their SoS, zeroing everything below
    ``eps_rel * max(SoS)``."""
    coil_images = np.asarray(coil_images)
    r = sos(coil_images)
    peak = r.max() if r.size else 0.0
    if peak <= 0:
        raise CalibrationError("empty foreground: all coil images are zero")
    fg = r >= eps_rel * peak
    safe = np.where(fg, r, 1.0)
    data = np.where(fg, coil_images / safe, 0)
    return SenseMaps(data, fg)


def gt_maps(full_coil_images, eps_rel=EPS_REL):
    """Reference maps from fully sampled coil images: S_j = x_j / SoS(x)."""
    return normalize_maps(full_coil_images, eps_rel)


def raised_cosine(n):
    """Symmetric raised-cosine window of length ``n`` spanning the whole extent."""
    if n <= 0:
        return np.zeros(0)
    i = np.arange(1, n + 1)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n + 1)))


def acs_lowres_maps(y, mask: SamplingMask, taper=True, eps_rel=EPS_REL):
    """Low-resolution maps from the ACS region only.

    k-space outside the ACS region is zeroed, a separable raised-cosine
    taper is applied over the ACS extent (``taper=False`` for a hard crop),
    and the resulting low-resolution coil images are SoS-normalized.
    """
    region = mask.acs_region()
    if not region.any():
        raise CalibrationError("mask has no ACS region")
    H, W = mask.shape
    win = np.ones((H, W))
    if taper:
        rows = np.flatnonzero(region.any(axis=1))
        cols = np.flatnonzero(region.any(axis=0))
        wr = np.zeros(H)
        wc = np.zeros(W)
        # a region spanning the full axis is left untapered on that axis
        wr[rows] = 1.0 if len(rows) == H else raised_cosine(len(rows))
        wc[cols] = 1.0 if len(cols) == W else raised_cosine(len(cols))
        win = np.outer(wr, wc)
    lowres = ifft2c(np.asarray(y) * region * win)
    return normalize_maps(lowres, eps_rel)


@dataclass
class PolyMapModel:
    """Per-coil tensor-product Chebyshev coefficients.

    ``coeffs`` has shape (J, (degree+1)**2). ``weight`` is an optional real
    envelope (H, W) multiplying every polynomial; ``None`` means 1.
    """

    degree: int
    coeffs: np.ndarray
    weight: np.ndarray = field(default=None)
    ill_conditioned: bool = False

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != (self.degree + 1) ** 2:
            raise ValueError(f"coeffs shape {self.coeffs.shape} does not match degree {self.degree}")


def poly_basis(degree, H, W):
    """Chebyshev basis on the pixel grid mapped to [-1, 1]^2, shape (B, H, W)."""
    u = np.linspace(-1.0, 1.0, H)
    v = np.linspace(-1.0, 1.0, W)
    eye = np.eye(degree + 1)
    tu = np.stack([chebyshev.chebval(u, eye[p]) for p in range(degree + 1)])
    tv = np.stack([chebyshev.chebval(v, eye[q]) for q in range(degree + 1)])
    return (tu[:, None, :, None] * tv[None, :, None, :]).reshape(-1, H, W)


def poly_maps_raw(model: PolyMapModel, H, W):
    """Evaluate the polynomials without normalization, shape (J, H, W)."""
    B = poly_basis(model.degree, H, W)
    raw = np.tensordot(model.coeffs, B, axes=(1, 0))
    if model.weight is not None:
        raw = raw * model.weight
    return raw


def eval_poly_maps(model: PolyMapModel, H, W, eps_rel=EPS_REL):
    """Evaluate the model on an H x W grid and SoS-normalize."""
    return normalize_maps(poly_maps_raw(model, H, W), eps_rel)


def fit_poly_maps(x, y, mask, degree=6, weight=None, ridge=1e-10):
    """Least-squares polynomial maps for a fixed image.

    For every coil solves ``min_c || y_j - U F (P(c) * weight * x) ||^2``
    over tensor-product Chebyshev polynomials ``P`` of the given degree.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    om = _omega(mask)
    H, W = x.shape
    xe = x if weight is None else x * weight
    if not np.any(np.abs(xe) > 0):
        raise CalibrationError("degenerate fit: image is identically zero")
    B = poly_basis(degree, H, W)
    # columns of the system matrix: sampled k-space of each basis function times the image
    A = fft2c(B * xe)[:, om].T
    rhs = y[:, om].T
    if not np.any(np.abs(A) > 0):
        raise CalibrationError("degenerate fit: image has no energy on the sampled set")
    c, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    ill = rank < A.shape[1]
    if ill:
        warnings.warn("rank-deficient polynomial basis; using a ridge-regularized solve", RuntimeWarning)
        G = A.conj().T @ A
        scale = np.trace(G).real / G.shape[0]
        c = np.linalg.solve(G + ridge * scale * np.eye(G.shape[0]), A.conj().T @ rhs)
    return PolyMapModel(degree, c.T, weight, bool(ill))


def normal_residual(model: PolyMapModel, x, y, mask):
    """Relative normal-equation residual ||A^H (A c - y)|| / ||A^H y|| of a fit."""
    x = np.asarray(x)
    om = _omega(mask)
    H, W = x.shape
    xe = x if model.weight is None else x * model.weight
    A = fft2c(poly_basis(model.degree, H, W) * xe)[:, om].T
    rhs = np.asarray(y)[:, om].T
    r = A.conj().T @ (A @ model.coeffs.T - rhs)
    return float(np.linalg.norm(r) / max(np.linalg.norm(A.conj().T @ rhs), 1e-300))
