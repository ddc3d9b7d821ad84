import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jdsi.harness.metrics import rlne
from jdsi.harness.phantom import random_spec, synth_sample
from jdsi.mri import (ParameterError, SamplingMask, SenseMaps, ShapeError, data_consistency,
                      data_consistency_kspace, make_mask_1d, make_mask_2d, sense_adjoint, sense_forward,
                      sense_normal, zero_filled)
from jdsi.numerics import fft2c, ifft2c, inner, sos
from jdsi.recon import cg_sense

from conftest import crandn, unit_sos_maps


# --- masks ------------------------------------------------------------------------

def test_mask_1d_full():
    m = make_mask_1d(32, 16, 1, 0, 0)
    assert m.omega.all()


def test_mask_1d_320_af4_acs24():
    m = make_mask_1d(320, 8, 4, 24, 5)
    cols = m.omega.any(axis=0)
    assert cols.sum() == 80
    assert cols[160 - 12:160 + 12].all()
    # full columns: constant along the frequency-encode axis
    assert (m.omega == m.omega[0]).all()
    assert m.acs_region()[:, 160 - 12:160 + 12].all()


def test_mask_1d_calibrationless_center_not_forced():
    centers = [make_mask_1d(320, 4, 4, 0, s).omega[0, 148:172].all() for s in range(10)]
    assert sum(make_mask_1d(320, 4, 4, 0, s).omega[0].sum() == 80 for s in range(3)) == 3
    assert not all(centers)
    assert make_mask_1d(320, 4, 4, 0, 0).acs_kind == "none"


def test_mask_2d_af10_block8():
    m = make_mask_2d(64, 64, 10, 8, 3)
    assert m.omega.sum() == 410
    assert m.omega[28:36, 28:36].all()


def test_mask_2d_full():
    assert make_mask_2d(16, 12, 1, 0, 1).omega.all()


@given(st.sampled_from(["1d", "2d"]), st.floats(1, 12), st.integers(0, 2**40))
def test_masks_reproducible_and_af_close(kind, af, seed):
    make = make_mask_1d if kind == "1d" else make_mask_2d
    acs = 2 if kind == "1d" else 0
    a, b = make(64, 48, af, acs, seed), make(64, 48, af, acs, seed)
    assert np.array_equal(a.omega, b.omega)
    assert abs(a.af_actual - af) <= 0.1 * af
    assert (a.omega | ~a.acs_region()).all()


def test_mask_errors():
    with pytest.raises(ParameterError):
        make_mask_1d(64, 64, 0.5, 0, 0)
    with pytest.raises(ParameterError):
        make_mask_1d(64, 64, 4, 17, 0)
    with pytest.raises(ParameterError):
        make_mask_2d(64, 64, 10, 30, 0)
    with pytest.raises(ShapeError):
        SamplingMask(np.ones(4, bool))


def test_different_seeds_differ():
    assert not np.array_equal(make_mask_1d(64, 64, 4, 4, 1).omega, make_mask_1d(64, 64, 4, 4, 2).omega)


# --- SENSE operators ------------------------------------------------------------------

def _instance(gen, J=3, H=8, W=10, p=0.5):
    S = unit_sos_maps(gen, J, H, W)
    mask = gen.uniform(size=(H, W)) < p
    return S, mask


def test_forward_zero_image(gen):
    S, mask = _instance(gen)
    assert not sense_forward(S, np.zeros((8, 10)), mask).any()
    assert not sense_adjoint(S, np.zeros((3, 8, 10)), mask).any()


def test_single_coil_identity_maps_is_fft(gen):
    x = crandn(gen, 6, 6)
    y = sense_forward(np.ones((1, 6, 6)), x, np.ones((6, 6), bool))
    np.testing.assert_allclose(y[0], fft2c(x), atol=1e-14)


def test_forward_zero_off_mask(gen):
    S, mask = _instance(gen)
    y = sense_forward(S, crandn(gen, 8, 10), mask)
    assert not y[:, ~mask].any()


def test_adjoint_inner_product_50_draws():
    g = np.random.default_rng(7)
    for _ in range(50):
        J, H, W = g.integers(1, 5), g.integers(4, 12), g.integers(4, 12)
        S, mask = _instance(g, J, H, W, g.uniform(0.1, 1))
        x, y = crandn(g, H, W), crandn(g, J, H, W)
        Ex = sense_forward(S, x, mask)
        err = abs(inner(Ex, y) - inner(x, sense_adjoint(S, y, mask)))
        assert err <= 1e-10 * max(np.linalg.norm(Ex) * np.linalg.norm(y), 1e-300)


def test_normal_is_identity_for_full_mask(gen):
    S = unit_sos_maps(gen, 4, 8, 8)
    x = crandn(gen, 8, 8)
    np.testing.assert_allclose(sense_normal(S, x, np.ones((8, 8), bool)), x, atol=1e-10)


def test_shape_mismatch(gen):
    S, mask = _instance(gen)
    with pytest.raises(ShapeError):
        sense_forward(S, np.zeros((8, 9)), mask)
    with pytest.raises(ShapeError):
        sense_adjoint(S, np.zeros((2, 8, 10)), mask)
    with pytest.raises(ShapeError):
        SenseMaps(np.zeros((8, 8)))


def test_sense_maps_sos_error(gen):
    S = SenseMaps(unit_sos_maps(gen, 3, 5, 5))
    assert S.sos_error() < 1e-12
    assert S.coils == 3


def test_zero_filled_full_mask_recovers_coils(gen):
    coils = crandn(gen, 3, 8, 8)
    np.testing.assert_allclose(zero_filled(fft2c(coils)), coils, atol=1e-13)
    assert not zero_filled(np.zeros((3, 8, 8))).any()


def test_zero_filled_worse_than_cg_with_true_maps():
    truth, maps, ksp = synth_sample(random_spec(11), 4)
    m = make_mask_1d(64, 64, 4, 5, 11)
    y = ksp * m.omega
    x, _ = cg_sense(y, maps, m)
    assert rlne(sos(zero_filled(y)), truth) > rlne(x, truth)


# --- data consistency ----------------------------------------------------------------

def test_dc_lambda_zero_is_identity(gen):
    S, mask = _instance(gen)
    x = crandn(gen, 8, 10)
    y = crandn(gen, 3, 8, 10) * mask
    np.testing.assert_allclose(data_consistency(x, S, y, mask, 0.0), x, atol=1e-10)


def test_dc_large_lambda_matches_y(gen):
    S, mask = _instance(gen)
    x = crandn(gen, 8, 10)
    y = crandn(gen, 3, 8, 10) * mask
    k = data_consistency_kspace(x, S, y, mask, 1e6)
    assert np.linalg.norm(k[:, mask] - y[:, mask]) <= 2e-6 * np.linalg.norm(y[:, mask])
    K = fft2c(S * x)
    assert np.array_equal(k[:, ~mask], K[:, ~mask])


def _single_coil(seed):
    g = np.random.default_rng(seed)
    S = np.exp(1j * g.uniform(0, 2 * np.pi, (1, 8, 10)))
    mask = g.uniform(size=(8, 10)) < 0.5
    return S, mask, crandn(g, 8, 10), crandn(g, 1, 8, 10) * mask


@given(st.one_of(st.just(0.0), st.floats(1e11, 1e14)), st.integers(0, 10000))
def test_dc_idempotent_single_coil(lam, seed):
    # S S^H is the identity only for one unit-modulus coil; a second pass then
    # moves K' by (K' - y) lam / (1 + lam) = O(|K - y| / lam)
    S, mask, x, y = _single_coil(seed)
    once = data_consistency(x, S, y, mask, lam)
    twice = data_consistency(once, S, y, mask, lam)
    assert np.linalg.norm(twice - once) <= 1e-9 * np.linalg.norm(once)


@given(st.floats(0, 1e4), st.integers(0, 10000))
def test_dc_composition_single_coil(lam, seed):
    # two blends with lam equal one blend with (1 + lam)^2 - 1
    S, mask, x, y = _single_coil(seed)
    twice = data_consistency(data_consistency(x, S, y, mask, lam), S, y, mask, lam)
    direct = data_consistency(x, S, y, mask, lam * (lam + 2))
    assert np.linalg.norm(twice - direct) <= 1e-12 * np.linalg.norm(direct)


def test_dc_negative_lambda():
    S = np.ones((1, 4, 4))
    with pytest.raises(ParameterError):
        data_consistency(np.zeros((4, 4)), S, np.zeros((1, 4, 4)), np.ones((4, 4), bool), -1)
    with pytest.raises(ParameterError):
        data_consistency(np.zeros((4, 4)), S, np.zeros((1, 4, 4)), np.ones((4, 4), bool), np.inf)
