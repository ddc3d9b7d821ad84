"""Sampling masks, the SENSE encoding operator and k-space data consistency."""
from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidInputError, _check_finite, fft2c, ifft2c, rng


class ParameterError(ValueError):
    """Invalid sampling or solver parameters."""


class ShapeError(ValueError):
    pass


@dataclass
class SamplingMask:
    """Boolean k-space sampling pattern (True = acquired).

    ``acs_kind`` is ``"lines"`` for central full columns, ``"block"`` for a
    central square and ``"none"`` for calibrationless patterns.
    """

    omega: np.ndarray
    acs_kind: str = "none"
    acs_count: int = 0
    af_nominal: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=bool)
        if self.omega.ndim != 2:
            raise ShapeError(f"mask must be 2D, got shape {self.omega.shape}")

    @property
    def shape(self):
        return self.omega.shape

    @property
    def af_actual(self):
        n = int(self.omega.sum())
        return np.inf if n == 0 else self.omega.size / n

    def acs_region(self):
        """Boolean array marking the ACS positions (always a subset of omega)."""
        H, W = self.shape
        region = np.zeros((H, W), dtype=bool)
        if self.acs_kind == "lines" and self.acs_count > 0:
            region[:, _central_slice(W, self.acs_count)] = True
        elif self.acs_kind == "block" and self.acs_count > 0:
            region[_central_slice(H, self.acs_count), _central_slice(W, self.acs_count)] = True
        return region


@dataclass
class SenseMaps:
    """Coil sensitivities (J, H, W) with unit sum-of-squares on ``foreground``."""

    data: np.ndarray
    foreground: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"maps must be (J, H, W), got shape {self.data.shape}")
        if self.foreground is None:
            self.foreground = np.ones(self.data.shape[1:], dtype=bool)
        self.foreground = np.asarray(self.foreground, dtype=bool)

    @property
    def coils(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    def sos_error(self):
        """max |sum_j |S_j|^2 - 1| over the foreground."""
        if not self.foreground.any():
            return 0.0
        s2 = np.sum(np.abs(self.data) ** 2, axis=0)
        return float(np.max(np.abs(s2[self.foreground] - 1.0)))


def _central_slice(n, count):
    start = n // 2 - count // 2
    return slice(start, start + count)


def make_mask_1d(width, height, af, acs_lines, seed):
    """1D Cartesian mask of full columns.

    ``round(width / af)`` columns are acquired: the central ``acs_lines``
    columns plus a uniform random draw (without replacement) from the rest.
    """
    if af < 1:
        raise ParameterError(f"af must be >= 1, got {af}")
    budget = int(round(width / af))
    if acs_lines < 0 or acs_lines > budget:
        raise ParameterError(f"acs_lines={acs_lines} exceeds the column budget {budget} (width={width}, af={af})")
    cols = np.zeros(width, dtype=bool)
    cols[_central_slice(width, acs_lines)] = True
    free = np.flatnonzero(~cols)
    gen = rng(seed, f"mask1d:{width}x{height}:{af}:{acs_lines}")
    cols[gen.choice(free, size=budget - acs_lines, replace=False)] = True
    omega = np.broadcast_to(cols, (height, width)).copy()
    kind = "lines" if acs_lines > 0 else "none"
    return SamplingMask(omega, kind, int(acs_lines), float(af), int(seed))


def make_mask_2d(width, height, af, acs_block, seed):
    """Pointwise uniform random mask with an optional central ACS square."""
    if af < 1:
        raise ParameterError(f"af must be >= 1, got {af}")
    budget = int(round(height * width / af))
    if acs_block < 0 or acs_block > min(height, width) or acs_block**2 > budget:
        raise ParameterError(f"acs_block={acs_block} exceeds the sample budget {budget}")
    omega = np.zeros((height, width), dtype=bool)
    omega[_central_slice(height, acs_block), _central_slice(width, acs_block)] = True
    free = np.flatnonzero(~omega.ravel())
    gen = rng(seed, f"mask2d:{width}x{height}:{af}:{acs_block}")
    omega.ravel()[gen.choice(free, size=budget - acs_block**2, replace=False)] = True
    kind = "block" if acs_block > 0 else "none"
    return SamplingMask(omega, kind, int(acs_block), float(af), int(seed))


def _omega(mask):
    return mask.omega if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)


def _maps(S):
    return S.data if isinstance(S, SenseMaps) else np.asarray(S)


def sense_forward(S, x, mask):
    """y_j = U F (S_j * x); entries outside the mask are exactly zero."""
    s, om = _maps(S), _omega(mask)
    x = np.asarray(x)
    if x.shape[-2:] != s.shape[-2:] or om.shape != s.shape[-2:]:
        raise ShapeError(f"shape mismatch: maps {s.shape}, image {x.shape}, mask {om.shape}")
    return fft2c(s * x[..., None, :, :]) * om


def sense_adjoint(S, y, mask):
    """x = sum_j conj(S_j) * F^-1 (U^T y_j); exact adjoint of :func:`sense_forward`."""
    s, om = _maps(S), _omega(mask)
    y = np.asarray(y)
    if y.shape[-3:] != s.shape or om.shape != s.shape[-2:]:
        raise ShapeError(f"shape mismatch: maps {s.shape}, kspace {y.shape}, mask {om.shape}")
    return np.sum(np.conj(s) * ifft2c(y * om), axis=-3)


def sense_normal(S, x, mask):
    return sense_adjoint(S, sense_forward(S, x, mask), mask)


def zero_filled(y, mask=None):
    """Per-coil inverse FFT of the zero-filled k-space."""
    y = np.asarray(y)
    if mask is not None:
        y = y * _omega(mask)
    return ifft2c(y)


def data_consistency(x_tilde, S, y, mask, lam):
    """Blend the sampled k-space of ``S * x_tilde`` toward ``y``.

    On the mask, K <- (K + lam * y) / (1 + lam); off the mask K is kept as
    is. The corrected coil k-space is mapped back with an S^H combine.
    """
    if not np.isfinite(lam):
        raise ParameterError("lambda must be finite")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    s, om = _maps(S), _omega(mask)
    k = data_consistency_kspace(x_tilde, s, y, om, lam)
    return np.sum(np.conj(s) * ifft2c(k), axis=-3)


def data_consistency_kspace(x_tilde, S, y, mask, lam):
    """The corrected per-coil k-space K' used by :func:`data_consistency`."""
    s, om = _maps(S), _omega(mask)
    x_tilde = np.asarray(x_tilde)
    y = np.asarray(y)
    _check_finite(x_tilde, "x_tilde")
    if y.shape[-3:] != s.shape or x_tilde.shape[-2:] != s.shape[-2:]:
        raise ShapeError(f"shape mismatch: maps {s.shape}, kspace {y.shape}, image {x_tilde.shape}")
    k = fft2c(s * x_tilde[..., None, :, :])
    blended = (k + lam * y) / (1.0 + lam)
    return np.where(om, blended, k)


def add_noise(ksp, sigma, seed):
    """Complex white Gaussian noise with per-component std ``sigma``."""
    if sigma < 0:
        raise InvalidInputError("noise sigma must be >= 0")
    if sigma == 0:
        return np.array(ksp, copy=True)
    gen = rng(seed, "noise")
    n = gen.standard_normal(ksp.shape) + 1j * gen.standard_normal(ksp.shape)
    return ksp + sigma * n
