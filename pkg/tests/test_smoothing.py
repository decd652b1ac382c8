import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisemorph.smoothing import (
    RtvConfig,
    SolverError,
    estimate_initial_noise,
    median_filter,
    relative_residual,
    rtv_objective,
    rtv_smooth,
    rtv_solve,
    rtv_weights,
    system_matrix,
)

TIGHT = RtvConfig(solver_tol=1e-10, solver_max_iter=20000)


def dense_forward_difference(h, w):
    # Independent construction: explicit loops over the row-major grid.
    n = h * w
    dh = np.zeros((n, n))
    dv = np.zeros((n, n))
    for y in range(h):
        for x in range(w):
            i = y * w + x
            if x + 1 < w:
                dh[i, i], dh[i, i + 1] = -1.0, 1.0
            if y + 1 < h:
                dv[i, i], dv[i, i + w] = -1.0, 1.0
    return dh, dv


def dense_solve(o1, wh, wv, alpha):
    h, w = o1.shape
    dh, dv = dense_forward_difference(h, w)
    a = np.eye(h * w) + alpha * (dh.T @ np.diag(wh.ravel()) @ dh + dv.T @ np.diag(wv.ravel()) @ dv)
    return np.linalg.solve(a, o1.ravel()).reshape(h, w)


@pytest.mark.parametrize("seed", range(20))
def test_solver_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    o1 = rng.random((1, 16, 16))
    wh, wv = rtv_weights(o1, TIGHT)
    got = rtv_solve(o1, (wh, wv), TIGHT)
    want = dense_solve(o1[0], wh[0], wv[0], TIGHT.alpha)
    assert np.max(np.abs(got[0] - want)) <= 1e-8


def test_sparse_system_matches_dense_operators():
    rng = np.random.default_rng(1)
    wh, wv = rng.random((2, 6, 7)) + 0.1
    dh, dv = dense_forward_difference(6, 7)
    dense = np.eye(42) + 0.5 * (dh.T @ np.diag(wh.ravel()) @ dh + dv.T @ np.diag(wv.ravel()) @ dv)
    np.testing.assert_allclose(system_matrix(wh, wv, 0.5).toarray(), dense, atol=1e-12)


def test_weights_formula_on_a_step():
    img = np.zeros((1, 16, 16))
    img[:, :, 8:] = 1.0
    wh, wv = rtv_weights(img, RtvConfig())
    # far from the step the horizontal gradient and its windowed sum are both zero
    assert wh[0, 8, 0] == pytest.approx(1.0 / (1e-3 * 1e-3))
    # the step column has a large gradient, so a small weight
    assert wh[0, 8, 7] < 10.0
    np.testing.assert_allclose(wv, 1e6)


def test_solve_residual_bound_and_failure():
    rng = np.random.default_rng(3)
    o1 = rng.random((3, 20, 20))
    cfg = RtvConfig()
    w = rtv_weights(o1, cfg)
    s = rtv_solve(o1, w, cfg)
    assert np.all(relative_residual(s, o1, w, cfg.alpha) <= 1e-6)
    with pytest.raises(SolverError):
        rtv_solve(o1, w, RtvConfig(solver_max_iter=1, solver_tol=1e-14))


def test_median_filter_example():
    img = np.array([[1, 2, 3], [4, 100, 6], [7, 8, 9]], dtype=float)[np.newaxis]
    assert median_filter(img, 3)[0, 1, 1] == 6
    np.testing.assert_array_equal(median_filter(img, 1), img)
    with pytest.raises(ValueError):
        median_filter(img, 2)


@pytest.mark.parametrize("value", [0.0, 0.3, 1.0])
def test_constant_image_is_fixed_point(value):
    img = np.full((3, 16, 16), value)
    res = estimate_initial_noise(img)
    np.testing.assert_allclose(res.smoothed, value, atol=1e-6)
    np.testing.assert_allclose(res.residual, 0.0, atol=1e-6)


def test_solution_minimises_the_quadratic_objective():
    rng = np.random.default_rng(5)
    o1 = rng.random((1, 12, 12))
    w = rtv_weights(o1, TIGHT)
    s = rtv_solve(o1, w, TIGHT)
    f0 = rtv_objective(s, o1, w, TIGHT.alpha)
    for k in range(5):
        pert = s + 1e-3 * rng.standard_normal(s.shape)
        assert rtv_objective(pert, o1, w, TIGHT.alpha) > f0


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1))
def test_more_smoothing_with_larger_alpha(seed):
    rng = np.random.default_rng(seed)
    o1 = rng.random((1, 16, 16))

    def roughness(alpha):
        s = rtv_smooth(o1, RtvConfig(alpha=alpha, iterations=1))
        return np.sum(np.diff(s, axis=-1) ** 2) + np.sum(np.diff(s, axis=-2) ** 2)

    r = [roughness(a) for a in (0.0, 0.005, 0.015, 0.05)]
    assert all(x >= y for x, y in zip(r, r[1:]))


def test_flat_noisy_image_residual_keeps_the_noise():
    rng = np.random.default_rng(8)
    noise = 0.05 * rng.standard_normal((1, 48, 48))
    res = estimate_initial_noise(0.5 + noise)
    # the smoothed image is nearly flat, so the residual carries most of the noise
    assert res.smoothed.std() < 0.2 * noise.std()


def test_decomposition_identities():
    rng = np.random.default_rng(9)
    o = rng.random((3, 24, 24))
    res = estimate_initial_noise(o)
    np.testing.assert_allclose(res.smoothed + res.residual, o, atol=1e-15)
    np.testing.assert_allclose(res.filtered, median_filter(o, 3))
    assert res.smoothed.shape == o.shape
