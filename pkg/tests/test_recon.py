import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jdsi.calibration import acs_lowres_maps
from jdsi.harness.metrics import rlne
from jdsi.harness.phantom import random_spec, synth_sample
from jdsi.mri import make_mask_1d, sense_adjoint, sense_forward
from jdsi.numerics import ifft2c, sos
from jdsi.recon import (DivergenceError, cg_sense, haar2, ihaar2, jsense, pfista_sense, read_iterlog_csv,
                        soft_threshold, write_iterlog_csv)

from conftest import crandn, unit_sos_maps


@pytest.fixture(scope="module")
def phantom_af4():
    truth, maps, ksp = synth_sample(random_spec(21, noise_sigma=0.0), 4)
    mask = make_mask_1d(64, 64, 4, 5, 21)
    return truth, maps, ksp * mask.omega, mask


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(0.5, 1.0) == 0.0
    assert soft_threshold(-3.0, 1.0) == -2.0
    assert abs(soft_threshold(3 + 4j, 1.0) - (2.4 + 3.2j)) < 1e-15
    assert soft_threshold(0j, 1.0) == 0


@given(st.integers(0, 10000), st.integers(1, 3))
def test_haar_orthonormal(seed, levels):
    x = crandn(np.random.default_rng(seed), 16, 24)
    c = haar2(x, levels)
    assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-12 * np.linalg.norm(x)
    assert np.max(np.abs(ihaar2(c, levels) - x)) <= 1e-12 * np.abs(x).max()


def test_haar_matrix_is_orthogonal():
    n = 8
    W = np.stack([haar2(np.eye(n * n)[i].reshape(n, n)).ravel() for i in range(n * n)], axis=1)
    np.testing.assert_allclose(W.T @ W, np.eye(n * n), atol=1e-12)


def test_haar_bad_dims():
    with pytest.raises(ValueError):
        haar2(np.ones((6, 8)), levels=2)


def test_cg_full_mask_one_iteration(gen):
    S = unit_sos_maps(gen, 3, 8, 8)
    full = np.ones((8, 8), bool)
    y = sense_forward(S, crandn(gen, 8, 8), full)
    x, log = cg_sense(y, S, full)
    assert len(log) == 1
    np.testing.assert_allclose(x, sense_adjoint(S, y, full), atol=1e-12)


def test_cg_zero_data(gen):
    S = unit_sos_maps(gen, 2, 8, 8)
    x, log = cg_sense(np.zeros((2, 8, 8)), S, np.ones((8, 8), bool))
    assert not x.any() and log == []


def test_cg_beats_zero_filled_and_residual_monotone(phantom_af4):
    truth, maps, y, mask = phantom_af4
    x, log = cg_sense(y, maps, mask)
    assert rlne(x, truth) < rlne(sos(ifft2c(y)), truth)
    res = [r.residual for r in log]
    assert all(b <= a for a, b in zip(res, res[1:]))
    assert [r.iteration for r in log] == list(range(1, len(log) + 1))


def test_pfista_lambda0_matches_cg(gen):
    S = unit_sos_maps(gen, 4, 16, 16)
    mask = gen.uniform(size=(16, 16)) < 0.6
    y = sense_forward(S, crandn(gen, 16, 16), mask)
    xc, _ = cg_sense(y, S, mask, max_iters=500, tol=1e-13)
    xp, _ = pfista_sense(y, S, mask, reg_lambda=0.0, max_iters=3000)
    assert rlne(xp, xc) < 1e-6
    # fixed point of the normal equations
    g = sense_adjoint(S, sense_forward(S, xp, mask) - y, mask)
    assert np.linalg.norm(g) < 1e-6 * np.linalg.norm(sense_adjoint(S, y, mask))


def test_pfista_objective_and_quality(phantom_af4):
    truth, maps, y, mask = phantom_af4
    x, log = pfista_sense(y, maps, mask, reg_lambda=1e-3)
    obj = [r.objective for r in log]
    assert all(b <= a for a, b in zip(obj[2:], obj[3:]))
    assert rlne(x, truth) < rlne(sos(ifft2c(y)), truth)


def test_pfista_divergence_on_bad_maps(gen):
    S = 3 * unit_sos_maps(gen, 2, 8, 8)
    y = sense_forward(S, crandn(gen, 8, 8), np.ones((8, 8), bool))
    with pytest.raises(DivergenceError):
        pfista_sense(y, S, np.ones((8, 8), bool), reg_lambda=0.0, max_iters=50)


def test_jsense_fixed_point_at_truth():
    truth, maps, ksp = synth_sample(random_spec(5), 4)
    full = make_mask_1d(64, 64, 1, 0, 0)
    x, S, log = jsense(ksp, full, outer_iters=1, init_maps=maps, x0=truth)
    assert np.max(np.abs(x - truth)) < 1e-8
    assert log[0].objective < 1e-20


def test_jsense_zero_iterations_returns_init(phantom_af4):
    truth, maps, y, mask = phantom_af4
    x, S, log = jsense(y, mask, outer_iters=0, init_maps=maps, x0=truth)
    assert S is maps and np.array_equal(x, truth) and len(log) == 1
    x, S, _ = jsense(y, mask, outer_iters=0)
    np.testing.assert_array_equal(S.data, acs_lowres_maps(y, mask).data)
    np.testing.assert_array_equal(x, sense_adjoint(S, y, mask))


def test_jsense_improves_on_acs_cg(phantom_af4):
    truth, maps, y, mask = phantom_af4
    xj, Sj, log = jsense(y, mask)
    xa, _ = cg_sense(y, acs_lowres_maps(y, mask), mask)
    assert rlne(xj, truth) <= rlne(xa, truth)
    f = [r.objective for r in log]
    assert len(f) == 9
    assert all(b <= a + 1e-8 for a, b in zip(f, f[1:]))
    assert Sj.sos_error() < 1e-8


def test_iterlog_csv_roundtrip(tmp_path, phantom_af4):
    truth, maps, y, mask = phantom_af4
    _, log = cg_sense(y, maps, mask, max_iters=5)
    p = tmp_path / "log.csv"
    write_iterlog_csv(p, log)
    assert read_iterlog_csv(p) == log
    assert p.read_text().splitlines()[0] == "iteration,objective,residual,seconds"
