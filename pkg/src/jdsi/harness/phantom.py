"""Synthetic multi-coil phantoms (ellipse head model + smooth coil profiles)."""
from dataclasses import dataclass, field

import numpy as np

from ..calibration import EPS_REL
from ..mri import SenseMaps, add_noise
from ..numerics import fft2c, rng


class PhantomError(ValueError):
    pass


# (cx, cy, a, b, angle_deg, intensity), painted in order; later ellipses overwrite
HEAD = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, 0.45),
    (0.22, 0.0, 0.11, 0.31, -18.0, 0.12),
    (-0.22, 0.0, 0.16, 0.41, 18.0, 0.12),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.7),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.85),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.85),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.7),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.7),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.7),
]


@dataclass
class PhantomSpec:
    """Ellipse phantom description in normalized [-1, 1]^2 coordinates.

    Each ellipse is ``(cx, cy, a, b, angle_deg, intensity)``; lesions use the
    same layout and are painted last. ``coil_offset`` rotates the coil ring
    (radians) and ``coil_phase`` scales the linear phase across each coil.
    """

    dims: tuple = (64, 64)
    ellipses: list = field(default_factory=lambda: list(HEAD))
    lesions: list = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0
    coil_offset: float = 0.0
    coil_radius: float = 1.15
    coil_width: float = 0.5
    coil_phase: float = 1.0

    def validate(self):
        H, W = self.dims
        if H < 4 or W < 4:
            raise PhantomError(f"dims must be >= 4, got {self.dims}")
        if self.noise_sigma < 0:
            raise PhantomError("noise_sigma must be >= 0")
        for e in list(self.ellipses) + list(self.lesions):
            cx, cy, a, b, _, inten = e
            if not 0.0 <= inten <= 1.5:
                raise PhantomError(f"intensity {inten} outside [0, 1.5]")
            if a <= 0 or b <= 0:
                raise PhantomError("ellipse axes must be positive")
            if abs(cx) + max(a, b) > 1.0 + 1e-9 or abs(cy) + max(a, b) > 1.0 + 1e-9:
                raise PhantomError(f"ellipse {e} leaves the field of view")


def _grid(H, W):
    # row index -> y (top = +1), column index -> x
    yy = np.linspace(1.0, -1.0, H)[:, None] * np.ones((1, W))
    xx = np.ones((H, 1)) * np.linspace(-1.0, 1.0, W)[None, :]
    return xx, yy


def paint(spec: PhantomSpec):
    """Rasterize ellipses and lesions into a real, non-negative image."""
    spec.validate()
    H, W = spec.dims
    xx, yy = _grid(H, W)
    img = np.zeros((H, W))
    for cx, cy, a, b, ang, inten in list(spec.ellipses) + list(spec.lesions):
        t = np.deg2rad(ang)
        u = (xx - cx) * np.cos(t) + (yy - cy) * np.sin(t)
        v = -(xx - cx) * np.sin(t) + (yy - cy) * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] = inten
    return img


def coil_profiles(spec: PhantomSpec, J):
    """Smooth complex coil profiles normalized to unit SoS over the whole grid."""
    H, W = spec.dims
    xx, yy = _grid(H, W)
    prof = np.empty((J, H, W), dtype=complex)
    for j in range(J):
        th = spec.coil_offset + 2 * np.pi * j / J
        cx, cy = spec.coil_radius * np.cos(th), spec.coil_radius * np.sin(th)
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        mag = np.exp(-d2 / (2 * spec.coil_width**2))
        phase = th + spec.coil_phase * (xx * np.cos(th) + yy * np.sin(th))
        prof[j] = mag * np.exp(1j * phase)
    return prof / np.sqrt(np.sum(np.abs(prof) ** 2, axis=0))


def synth_sample(spec: PhantomSpec, J):
    """Truth image, true maps and fully sampled multi-coil k-space.

    The maps are zero outside the object support (their foreground), so
    ``gt_maps(ifft2c(kspace))`` reproduces them exactly when noise is off.
    """
    if J < 1:
        raise PhantomError("need at least one coil")
    truth = paint(spec)
    fg = truth >= EPS_REL * truth.max() if truth.max() > 0 else np.zeros(truth.shape, bool)
    if not fg.any():
        raise PhantomError("phantom is empty")
    truth = np.where(fg, truth, 0.0).astype(complex)
    maps = SenseMaps(np.where(fg, coil_profiles(spec, J), 0), fg)
    ksp = fft2c(maps.data * truth)
    ksp = add_noise(ksp, spec.noise_sigma, spec.seed)
    return truth, maps, ksp


def random_spec(seed, dims=(64, 64), n_lesions=0, noise_sigma=0.0, jitter=1.0, coil_width=0.5, coil_radius=1.15):
    """Randomly perturbed head phantom; identical ``seed`` gives an identical spec."""
    g = rng(seed, "phantom")
    ell = []
    for cx, cy, a, b, ang, inten in HEAD:
        s = 1.0 + jitter * g.uniform(-0.08, 0.08)
        ell.append((
            cx + jitter * g.uniform(-0.02, 0.02),
            cy + jitter * g.uniform(-0.02, 0.02),
            a * s * (1 + jitter * g.uniform(-0.03, 0.03)),
            b * s * (1 + jitter * g.uniform(-0.03, 0.03)),
            ang + jitter * g.uniform(-8, 8),
            float(np.clip(inten * (1 + jitter * g.uniform(-0.12, 0.12)), 0.0, 1.5)),
        ))
    # keep the outer ellipses inside the field of view
    ell = [(cx, cy, min(a, 0.97 - abs(cx)), min(b, 0.97 - abs(cy)), ang, i) for cx, cy, a, b, ang, i in ell]
    lesions = []
    for _ in range(n_lesions):
        r = np.sqrt(g.uniform(0, 1)) * 0.45
        t = g.uniform(0, 2 * np.pi)
        a = g.uniform(0.03, 0.07)
        inten = 1.3 if g.uniform() < 0.5 else 0.02
        lesions.append((r * np.cos(t) * 0.6, r * np.sin(t) * 0.8, a, a * g.uniform(0.6, 1.0), g.uniform(0, 180), inten))
    return PhantomSpec(
        dims=tuple(dims),
        ellipses=ell,
        lesions=lesions,
        noise_sigma=noise_sigma,
        seed=int(seed),
        coil_offset=g.uniform(0, 2 * np.pi),
        coil_radius=coil_radius,
        coil_width=coil_width * (1 + 0.1 * jitter * g.uniform(-1, 1)),
        coil_phase=g.uniform(0.5, 1.5),
    )
