import warnings

import numpy as np
import pytest

from jdsi.calibration import (CalibrationError, PolyMapModel, acs_lowres_maps, eval_poly_maps, fit_poly_maps,
                              gt_maps, normal_residual, poly_basis, poly_maps_raw, raised_cosine)
from jdsi.harness.phantom import random_spec, synth_sample
from jdsi.mri import SamplingMask, make_mask_1d, make_mask_2d
from jdsi.numerics import fft2c, ifft2c, sos

from conftest import crandn


def test_gt_single_real_coil_is_one(gen):
    x = np.abs(gen.standard_normal((1, 6, 7))) + 0.1
    S = gt_maps(x)
    np.testing.assert_allclose(S.data[0][S.foreground], 1.0, atol=1e-15)


def test_gt_quadrature_pair(gen):
    x1 = crandn(gen, 6, 6)
    S = gt_maps(np.stack([x1, 1j * x1]))
    np.testing.assert_allclose(np.abs(S.data[:, S.foreground]), 1 / np.sqrt(2), atol=1e-14)


def test_gt_identities(gen):
    x = crandn(gen, 4, 9, 9)
    x[:, 0, 0] = 0
    S = gt_maps(x)
    assert S.sos_error() <= 1e-10
    assert not S.foreground[0, 0] and not S.data[:, 0, 0].any()
    fg = S.foreground
    assert np.max(np.abs(S.data[:, fg] * sos(x)[fg] - x[:, fg])) <= 1e-12 * np.abs(x).max()


def test_gt_zero_input():
    with pytest.raises(CalibrationError):
        gt_maps(np.zeros((2, 4, 4)))


def test_raised_cosine():
    w = raised_cosine(5)
    assert w.shape == (5,) and np.all(w > 0) and w[2] == pytest.approx(1.0)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)


def test_acs_full_grid_no_taper_equals_gt(gen):
    coils = crandn(gen, 3, 8, 8)
    y = fft2c(coils)
    mask = SamplingMask(np.ones((8, 8), bool), "block", 8, 1.0, 0)
    a, b = acs_lowres_maps(y, mask, taper=False), gt_maps(coils)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)
    # a full-extent region is never tapered
    np.testing.assert_allclose(acs_lowres_maps(y, mask).data, b.data, atol=1e-12)


def test_acs_correlation_with_gt():
    truth, maps, ksp = synth_sample(random_spec(4), 4)
    m = make_mask_1d(64, 64, 4, 5, 4)
    S = acs_lowres_maps(ksp * m.omega, m)
    assert S.sos_error() <= 1e-8
    fg = maps.foreground
    for j in range(4):
        a, b = S.data[j][fg], maps.data[j][fg]
        assert abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)) > 0.9


def test_acs_2d_block_unit_sos():
    truth, maps, ksp = synth_sample(random_spec(2), 4)
    m = make_mask_2d(64, 64, 10, 8, 2)
    assert acs_lowres_maps(ksp * m.omega, m).sos_error() <= 1e-8


def test_acs_missing():
    m = make_mask_1d(64, 64, 4, 0, 0)
    with pytest.raises(CalibrationError):
        acs_lowres_maps(np.ones((2, 64, 64)), m)


def test_poly_basis_shape_and_constant():
    B = poly_basis(3, 5, 7)
    assert B.shape == (16, 5, 7)
    np.testing.assert_allclose(B[0], 1.0)


def test_fit_degree0_recovers_constant(gen):
    x = crandn(gen, 8, 8)
    c = 0.3 - 0.8j
    y = fft2c(c * x)[None]
    model = fit_poly_maps(x, y, np.ones((8, 8), bool), degree=0)
    assert abs(model.coeffs[0, 0] - c) <= 1e-10


def _poly_instance(gen, degree=4, J=3, H=16, W=16):
    coeffs = crandn(gen, J, (degree + 1) ** 2) / (degree + 1)
    model = PolyMapModel(degree, coeffs)
    x = crandn(gen, H, W)
    raw = poly_maps_raw(model, H, W)
    return model, x, fft2c(raw * x), raw


def test_fit_degree4_exact_recovery(gen):
    model, x, y, raw = _poly_instance(gen)
    fit = fit_poly_maps(x, y, np.ones((16, 16), bool), degree=4)
    np.testing.assert_allclose(fit.coeffs, model.coeffs, atol=1e-8)
    est = poly_maps_raw(fit, 16, 16)
    assert np.linalg.norm(est - raw) / np.linalg.norm(raw) < 1e-8
    Sa, Sb = eval_poly_maps(fit, 16, 16), eval_poly_maps(model, 16, 16)
    assert np.linalg.norm(Sa.data - Sb.data) / np.linalg.norm(Sb.data) < 1e-8
    assert normal_residual(fit, x, y, np.ones((16, 16), bool)) < 1e-8


def test_fit_refit_fixed_point(gen):
    x = crandn(gen, 16, 16)
    y = fft2c(crandn(gen, 2, 16, 16))
    mask = np.ones((16, 16), bool)
    first = fit_poly_maps(x, y, mask, degree=3)
    again = fit_poly_maps(x, fft2c(poly_maps_raw(first, 16, 16) * x), mask, degree=3)
    assert np.linalg.norm(again.coeffs - first.coeffs) <= 1e-9 * np.linalg.norm(first.coeffs)


def test_fit_zero_image():
    with pytest.raises(CalibrationError):
        fit_poly_maps(np.zeros((8, 8)), np.ones((1, 8, 8)), np.ones((8, 8), bool), degree=2)


def test_fit_rank_deficient_warns(gen):
    # only 3 sampled points for 9 unknowns per coil
    mask = np.zeros((8, 8), bool)
    mask[4, 3:6] = True
    x = crandn(gen, 8, 8)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        model = fit_poly_maps(x, fft2c(crandn(gen, 1, 8, 8)) * mask, mask, degree=2)
    assert model.ill_conditioned
    assert any(issubclass(i.category, RuntimeWarning) for i in w)
    assert np.all(np.isfinite(model.coeffs))


def test_eval_constant_single_coil():
    model = PolyMapModel(0, np.array([[2 - 2j]]))
    S = eval_poly_maps(model, 5, 5)
    np.testing.assert_allclose(np.abs(S.data), 1.0, atol=1e-15)
    np.testing.assert_allclose(S.data, (2 - 2j) / abs(2 - 2j), atol=1e-15)


def test_eval_zero_model():
    with pytest.raises(CalibrationError):
        eval_poly_maps(PolyMapModel(2, np.zeros((2, 9))), 6, 6)


def test_poly_model_shape_check():
    with pytest.raises(ValueError):
        PolyMapModel(2, np.zeros((2, 8)))
