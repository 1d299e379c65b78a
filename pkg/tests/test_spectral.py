import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdfm.spectral import (
    EigenGrid,
    HeatSchedule,
    band_masks,
    dct,
    dct_matrix,
    eigen_grid,
    heat_endpoint,
    heat_raw_tau,
    idct,
    laplacian,
    radial_frequency,
    spectral_energy_split,
)


def brute_dct(x):
    """Orthonormal DCT-II written as the textbook double sum."""
    n = len(x)
    out = np.empty(n)
    for k in range(n):
        w = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
        out[k] = w * sum(x[m] * np.cos(np.pi * k * (2 * m + 1) / (2 * n)) for m in range(n))
    return out


finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("n", [1, 2, 3, 8, 13])
def test_dct_matches_direct_sum(n):
    x = np.random.default_rng(n).standard_normal(n)
    np.testing.assert_allclose(dct(x), brute_dct(x), atol=1e-12)


def test_dct_frozen_values():
    # x = [1, 2, 3, 4]; computed once with brute_dct and frozen
    expected = np.array([5.0, -2.230442497387663, 0.0, -0.15851266778110734])
    np.testing.assert_allclose(dct(np.array([1.0, 2.0, 3.0, 4.0])), expected, atol=1e-12)
    np.testing.assert_allclose(brute_dct(np.array([1.0, 2.0, 3.0, 4.0])), expected, atol=1e-12)


def test_dct_matrix_is_orthogonal_and_read_only():
    c = dct_matrix(9)
    np.testing.assert_allclose(c @ c.T, np.eye(9), atol=1e-13)
    with pytest.raises(ValueError):
        c[0, 0] = 1.0
    with pytest.raises(ValueError):
        dct_matrix(0)


def test_two_dimensional_dct_is_separable():
    x = np.random.default_rng(0).standard_normal((5, 7))
    rows = np.array([brute_dct(r) for r in x])
    both = np.array([brute_dct(c) for c in rows.T]).T
    np.testing.assert_allclose(dct(x), both, atol=1e-12)


def test_channels_last_layout():
    x = np.random.default_rng(1).standard_normal((2, 6, 5, 3))
    per_channel = np.stack([np.stack([dct(x[b, :, :, c]) for c in range(3)], -1) for b in range(2)])
    np.testing.assert_allclose(dct(x, (-3, -2)), per_channel, atol=1e-12)
    np.testing.assert_allclose(dct(x[0]), per_channel[0], atol=1e-12)
    with pytest.raises(ValueError, match="pass axes"):
        dct(x)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=finite))
def test_round_trip_and_parseval(x):
    c = dct(x)
    np.testing.assert_allclose(idct(c), x, atol=1e-10 * (1 + np.abs(x).max()))
    assert abs(np.sum(c**2) - np.sum(x**2)) <= 1e-10 * max(np.sum(x**2), 1e-300) + 1e-300


def test_eigenvalues_two_point_grid():
    lam = eigen_grid((2,)).lam
    np.testing.assert_allclose(lam, [0.0, -np.pi**2 / 4], rtol=1e-15)
    lam_half = eigen_grid((2,), 0.5).lam
    np.testing.assert_allclose(lam_half, [0.0, -np.pi**2 / 8], rtol=1e-15)


def test_eigen_grid_is_nonpositive_with_exact_zero_dc():
    g = eigen_grid((6, 9), 0.7)
    assert g.lam[0, 0] == 0.0
    assert np.all(g.lam[g.lam != 0] < 0)
    np.testing.assert_allclose(g.lam, -0.7 * np.pi**2 * radial_frequency((6, 9)) ** 2)


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
def test_eigen_grid_rejects_bad_strength(r):
    with pytest.raises(ValueError):
        eigen_grid((4,), r)


def test_eigen_grid_validation():
    with pytest.raises(ValueError):
        EigenGrid(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        EigenGrid(np.array([-1.0, -2.0]))
    with pytest.raises(ValueError):
        EigenGrid(np.zeros((2, 2, 2)))


def test_heat_identity_at_t_one():
    x = np.random.default_rng(2).standard_normal((8, 8, 3))
    u, lap = heat_endpoint(x, 1.0, HeatSchedule(eigen_grid((8, 8))))
    assert np.max(np.abs(u - x)) < 1e-12
    np.testing.assert_allclose(lap, laplacian(x, eigen_grid((8, 8))), atol=1e-12)


def test_heat_endpoint_rejects_out_of_range_time():
    sched = HeatSchedule(eigen_grid((4,)))
    with pytest.raises(ValueError):
        heat_endpoint(np.zeros(4), -0.1, sched)
    with pytest.raises(ValueError):
        heat_endpoint(np.zeros(4), 1.1, sched)


def test_heat_endpoint_t_zero_uses_floor():
    sched = HeatSchedule(eigen_grid((6,)), t_floor=1e-3)
    x = np.random.default_rng(3).standard_normal(6)
    np.testing.assert_array_equal(heat_endpoint(x, 0.0, sched)[0], heat_endpoint(x, 1e-3, sched)[0])


def test_single_point_grid_is_identity():
    sched = HeatSchedule(eigen_grid((1,)))
    x = np.array([[2.5], [-1.0]])
    u, lap = heat_endpoint(x, 0.3, sched)
    np.testing.assert_array_equal(u, x)
    np.testing.assert_array_equal(lap, 0.0)


def test_power_law_factor_per_coefficient():
    # t^{|lam|} is the closed form of exp(lam * tau) with tau = -log t
    sched = HeatSchedule(eigen_grid((10,)))
    x = np.random.default_rng(4).standard_normal(10)
    t = 0.37
    u, _ = heat_endpoint(x, t, sched)
    np.testing.assert_allclose(dct(u), t ** np.abs(sched.eigen.lam) * dct(x), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.integers(0, 1000))
def test_semigroup_and_contraction(a, b, seed):
    eigen = eigen_grid((7, 5))
    x = np.random.default_rng(seed).standard_normal((7, 5))
    lhs = heat_raw_tau(heat_raw_tau(x, a, eigen), b, eigen)
    rhs = heat_raw_tau(x, a + b, eigen)
    assert np.linalg.norm(lhs - rhs) <= 1e-8 * np.linalg.norm(rhs) + 1e-300
    assert np.linalg.norm(rhs) <= np.linalg.norm(x) * (1 + 1e-12)


def test_generator_finite_difference():
    eigen = eigen_grid((16, 16))
    x = np.random.default_rng(5).standard_normal((16, 16))
    for tau in (0.1, 0.5, 2.0):
        h = 1e-5
        fd = (heat_raw_tau(x, tau + h, eigen) - heat_raw_tau(x, tau - h, eigen)) / (2 * h)
        exact = laplacian(heat_raw_tau(x, tau, eigen), eigen)
        assert np.linalg.norm(fd - exact) / np.linalg.norm(exact) < 1e-5


def test_self_adjoint():
    eigen = eigen_grid((9, 9))
    rng = np.random.default_rng(6)
    for _ in range(5):
        a, b = rng.standard_normal((2, 9, 9))
        lhs = np.sum(heat_raw_tau(a, 0.8, eigen) * b)
        assert abs(lhs - np.sum(a * heat_raw_tau(b, 0.8, eigen))) < 1e-10 * abs(lhs)
        lhs = np.sum(laplacian(a, eigen) * b)
        assert abs(lhs - np.sum(a * laplacian(b, eigen))) < 1e-10 * abs(lhs)


def test_laplacian_of_constant_is_zero_and_matches_neumann_stencil():
    eigen = eigen_grid((12,))
    np.testing.assert_allclose(laplacian(np.full(12, 3.0), eigen), 0.0, atol=1e-12)
    # lowest cosine mode is an eigenvector with the tabulated eigenvalue
    n = np.arange(12)
    mode = np.cos(np.pi * (2 * n + 1) / 24)
    np.testing.assert_allclose(laplacian(mode, eigen), eigen.lam[1] * mode, atol=1e-12)


def test_heat_raw_tau_rejects_negative():
    with pytest.raises(ValueError):
        heat_raw_tau(np.zeros(3), -1.0, eigen_grid((3,)))


def test_batched_time_matches_loop():
    sched = HeatSchedule(eigen_grid((6, 6)))
    x = np.random.default_rng(7).standard_normal((3, 6, 6, 2))
    t = np.array([0.1, 0.5, 0.9])
    u, lap = heat_endpoint(x, t, sched)
    for i in range(3):
        ui, li = heat_endpoint(x[i], t[i], sched)
        np.testing.assert_allclose(u[i], ui, atol=1e-13)
        np.testing.assert_allclose(lap[i], li, atol=1e-12)


def test_schedule_clamps():
    sched = HeatSchedule(eigen_grid((4,)), t_floor=1e-4, s_eps=1e-3)
    assert sched.tau(0.0) == pytest.approx(-np.log(1e-4))
    assert sched.tau(1.0) == 0.0
    assert sched.s(1.0) == 1e-3
    assert sched.s(0.25) == 0.75
    with pytest.raises(ValueError):
        HeatSchedule(eigen_grid((4,)), t_floor=0.0)


def test_band_split():
    low, high = band_masks((8, 8), 0.5)
    assert low[0, 0] and high[7, 7]
    assert not np.any(low & high)
    x = np.random.default_rng(8).standard_normal((8, 8, 3))
    e_low, e_high = spectral_energy_split(x)
    assert e_low + e_high == pytest.approx(np.sum(x**2), rel=1e-12)
    with pytest.raises(ValueError):
        band_masks((8,), 1.0)


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError):
        heat_endpoint(np.zeros((5, 4)), 0.5, HeatSchedule(eigen_grid((4, 4))))
