"""Non-learned reconstructions: CG-SENSE, pFISTA-SENSE and JSENSE."""
import csv
import time
from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationError, acs_lowres_maps, eval_poly_maps, fit_poly_maps, poly_maps_raw
from .mri import sense_adjoint, sense_forward
from .numerics import sos


class DivergenceError(RuntimeError):
    def __init__(self, msg, log=None):
        super().__init__(msg)
        self.log = log or []


@dataclass
class IterLog:
    iteration: int
    objective: float
    residual: float
    seconds: float


def write_iterlog_csv(path, log):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "objective", "residual", "seconds"])
        for r in log:
            w.writerow([r.iteration, repr(r.objective), repr(r.residual), repr(r.seconds)])


def read_iterlog_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [IterLog(int(r["iteration"]), float(r["objective"]), float(r["residual"]), float(r["seconds"])) for r in rows]


# --- sparsifying transform -------------------------------------------------

def _haar_axis(x, axis):
    x = np.moveaxis(x, axis, -1)
    a, b = x[..., 0::2], x[..., 1::2]
    out = np.concatenate([(a + b) / np.sqrt(2), (a - b) / np.sqrt(2)], axis=-1)
    return np.moveaxis(out, -1, axis)


def _ihaar_axis(c, axis):
    c = np.moveaxis(c, axis, -1)
    n = c.shape[-1] // 2
    lo, hi = c[..., :n], c[..., n:]
    out = np.empty_like(c)
    out[..., 0::2] = (lo + hi) / np.sqrt(2)
    out[..., 1::2] = (lo - hi) / np.sqrt(2)
    return np.moveaxis(out, -1, axis)


def haar2(x, levels=2):
    """Orthonormal 2D Haar analysis; coarse band in the top-left corner."""
    x = np.array(x, dtype=np.result_type(x, float), copy=True)
    H, W = x.shape[-2:]
    if H % (2**levels) or W % (2**levels):
        raise ValueError(f"image dims {H}x{W} must be divisible by {2**levels}")
    h, w = H, W
    for _ in range(levels):
        band = x[..., :h, :w]
        band = _haar_axis(_haar_axis(band, -2), -1)
        x[..., :h, :w] = band
        h, w = h // 2, w // 2
    return x


def ihaar2(c, levels=2):
    c = np.array(c, copy=True)
    H, W = c.shape[-2:]
    sizes = [(H // 2**lv, W // 2**lv) for lv in range(levels)]
    for h, w in reversed(sizes):
        band = c[..., :h, :w]
        band = _ihaar_axis(_ihaar_axis(band, -1), -2)
        c[..., :h, :w] = band
    return c


def soft_threshold(x, rho):
    """max(|x| - rho, 0) * x / |x|, with 0 at x = 0 (works for complex x)."""
    x = np.asarray(x)
    mag = np.abs(x)
    scale = np.maximum(mag - rho, 0) / np.where(mag > 0, mag, 1)
    return x * scale


# --- solvers ---------------------------------------------------------------

def _data_obj(S, x, y, mask):
    r = y - sense_forward(S, x, mask)
    return 0.5 * float(np.vdot(r, r).real), r


def cg_sense(y, S, mask, max_iters=50, tol=1e-6, x0=None):
    """Least-squares SENSE by conjugate gradients on the normal equations.

    Runs in CGLS form, so the logged data residual ||y - E x|| never
    increases. Stops when ||E^H (y - E x)|| <= tol * ||E^H y||.
    """
    y = np.asarray(y) * (mask.omega if hasattr(mask, "omega") else mask)
    H, W = y.shape[-2:]
    x = np.zeros((H, W), dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    r = y - sense_forward(S, x, mask)
    s = sense_adjoint(S, r, mask)
    ref = np.linalg.norm(sense_adjoint(S, y, mask))
    p = s.copy()
    gamma = float(np.vdot(s, s).real)
    log = []
    t0 = time.perf_counter()
    if ref == 0 or np.sqrt(gamma) <= tol * ref:
        return x, log
    for it in range(1, max_iters + 1):
        q = sense_forward(S, p, mask)
        qq = float(np.vdot(q, q).real)
        if qq == 0:
            break
        alpha = gamma / qq
        x = x + alpha * p
        r = r - alpha * q
        s = sense_adjoint(S, r, mask)
        gamma_new = float(np.vdot(s, s).real)
        rn = float(np.linalg.norm(r))
        if not (np.isfinite(rn) and np.isfinite(gamma_new)):
            raise DivergenceError(f"non-finite iterate at CG iteration {it}", log)
        log.append(IterLog(it, 0.5 * rn**2, rn, time.perf_counter() - t0))
        if np.sqrt(gamma_new) <= tol * ref:
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, log


def pfista_sense(y, S, mask, reg_lambda=1e-3, max_iters=100, levels=2, x0=None):
    """SENSE with an l1 penalty on 2-level Haar coefficients, solved by FISTA.

    Step size 1 is valid because unit-SoS maps give ||E|| <= 1. Momentum is
    restarted whenever a step would raise the objective, so the logged
    objective is non-increasing.
    """
    y = np.asarray(y) * (mask.omega if hasattr(mask, "omega") else mask)
    H, W = y.shape[-2:]
    x = np.zeros((H, W), dtype=complex) if x0 is None else np.array(x0, dtype=complex)

    def objective(v):
        d, _ = _data_obj(S, v, y, mask)
        return d + reg_lambda * float(np.sum(np.abs(haar2(v, levels))))

    def prox_grad(v):
        g = sense_adjoint(S, sense_forward(S, v, mask) - y, mask)
        return ihaar2(soft_threshold(haar2(v - g, levels), reg_lambda), levels)

    f_prev = objective(x)
    f0 = max(f_prev, np.finfo(float).tiny)
    z, t = x.copy(), 1.0
    log = []
    t0 = time.perf_counter()
    for it in range(1, max_iters + 1):
        x_new = prox_grad(z)
        f_new = objective(x_new)
        if f_new > f_prev:
            # restart: plain proximal-gradient step from the last iterate
            t = 1.0
            x_new = prox_grad(x)
            f_new = objective(x_new)
        if not np.isfinite(f_new) or f_new > 10 * f0:
            raise DivergenceError(f"pFISTA diverged at iteration {it}", log)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t, f_prev = x_new, t_new, f_new
        res = float(np.linalg.norm(y - sense_forward(S, x, mask)))
        log.append(IterLog(it, f_new, res, time.perf_counter() - t0))
    return x, log


def jsense(y, mask, outer_iters=8, degree=6, init_maps=None, x0=None, cg_iters=10, tol=1e-6):
    """Alternating image / polynomial-map estimation.

    Each outer iteration runs a warm-started CG-SENSE image update, then
    refits the maps as polynomials (times the current normalization
    envelope) and SoS-normalizes them. The normalization is moved into
    the image so the product S*x, and hence the data fidelity, is
    unchanged. A map update that would raise the fidelity is rejected.
    Log entry 0 is the initialization; the objective column is
    ||y - E x||^2.
    """
    y = np.asarray(y)
    H, W = y.shape[-2:]
    S = acs_lowres_maps(y, mask) if init_maps is None else init_maps
    x = sense_adjoint(S, y, mask) if x0 is None else np.array(x0, dtype=complex)
    t0 = time.perf_counter()

    def fidelity(S_, x_):
        r = y * mask.omega - sense_forward(S_, x_, mask)
        return float(np.vdot(r, r).real)

    f = fidelity(S, x)
    log = [IterLog(0, f, np.sqrt(f), 0.0)]
    envelope = None
    for it in range(1, outer_iters + 1):
        x, _ = cg_sense(y, S, mask, max_iters=cg_iters, tol=tol, x0=x)
        f = fidelity(S, x)
        try:
            model = fit_poly_maps(x, y, mask, degree, weight=envelope)
            S_new = eval_poly_maps(model, H, W)
        except CalibrationError:
            if it == 1 and init_maps is None:
                raise
            S_new = None
        if S_new is not None:
            norm = sos(poly_maps_raw(model, H, W))
            x_new = np.where(S_new.foreground, x * norm, 0)
            f_new = fidelity(S_new, x_new)
            if f_new <= f:
                safe = np.where(S_new.foreground, norm, 1.0)
                base = np.ones((H, W)) if envelope is None else envelope
                envelope = np.where(S_new.foreground, base / safe, 0.0)
                S, x, f = S_new, x_new, f_new
        log.append(IterLog(it, f, np.sqrt(f), time.perf_counter() - t0))
    return x, S, log

