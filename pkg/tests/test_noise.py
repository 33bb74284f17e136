import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from nlslab.noise import (
    DENSITY_VARIANCE,
    NoiseSpec,
    block_force,
    block_norm_sq,
    default_spec,
    density,
    density_cdf,
    evaluate_noise,
    inverse_cdf,
    member_seed,
    sample_block,
    sample_theta,
    strength_B,
    time_basis,
    time_basis_matrix,
    zero_spec,
)
from nlslab.spectral import sobolev_norm


def test_time_basis_orthonormal():
    T = 1.7
    t = np.linspace(0, T, 4001)
    A = time_basis_matrix(6, T, t)
    G = integrate.simpson(A[:, :, None] * A[:, None, :], x=t, axis=0)
    np.testing.assert_allclose(G, np.eye(6), atol=1e-8)


def test_time_basis_window_checked():
    with pytest.raises(ValueError):
        time_basis(1, 1.0, 1.5)
    with pytest.raises(ValueError):
        time_basis(0, 1.0, 0.5)


def test_density_moments():
    assert integrate.quad(density, -1, 1)[0] == pytest.approx(1.0, abs=1e-12)
    assert integrate.quad(lambda x: x * x * density(x), -1, 1)[0] == pytest.approx(DENSITY_VARIANCE, abs=1e-12)
    assert density_cdf(-1) == pytest.approx(0.0) and density_cdf(1) == pytest.approx(1.0)


@given(st.floats(0, 1))
def test_inverse_cdf_inverts(u):
    x = inverse_cdf(u)
    assert -1 <= x <= 1
    assert density_cdf(x) == pytest.approx(u, abs=1e-7)


def test_sample_moments():
    spec = default_spec(K=24, J=8, K_eta=8)
    th = sample_theta(spec, np.arange(400), 0)
    assert np.all(np.abs(th) < 1)
    assert abs(th.mean()) < 0.01
    assert th.var() == pytest.approx(DENSITY_VARIANCE, rel=0.03)


@given(st.integers(0, 2 ** 40), st.integers(0, 50))
def test_blocks_reproducible_and_order_free(seed, n):
    spec = default_spec(K=8, J=3, K_eta=4)
    a = sample_theta(spec, seed, n)
    sample_theta(spec, seed + 1, n + 1)
    np.testing.assert_array_equal(sample_theta(spec, seed, n), a)
    batch = sample_theta(spec, np.array([seed, seed + 1]), n)
    np.testing.assert_array_equal(batch[0], a)


def test_distinct_streams_differ():
    spec = default_spec(K=8, J=3, K_eta=4)
    assert not np.array_equal(sample_theta(spec, 1, 0), sample_theta(spec, 1, 1))
    assert not np.array_equal(sample_theta(spec, 1, 0), sample_theta(spec, 2, 0))
    assert member_seed(0, 1) != member_seed(0, 2)


def test_default_spec_strength_and_nondegeneracy():
    spec = default_spec(K=64, B0=2.5, s=1, sigma=0.25)
    assert strength_B(spec, 1.25) == pytest.approx(2.5, rel=1e-12)
    assert spec.nondegenerate_up_to(24)
    assert not spec.nondegenerate_up_to(25)


def test_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(np.ones((2, 4)))
    with pytest.raises(ValueError):
        NoiseSpec(-np.ones((2, 3)))
    with pytest.raises(ValueError):
        NoiseSpec(np.ones((2, 21)), K=5)
    with pytest.raises(ValueError):
        NoiseSpec(np.ones((2, 3)), K=4, B0=0.1, r_bound=0.0)


def test_zero_and_scaled_specs():
    assert zero_spec().is_zero
    spec = default_spec(K=16, J=4, K_eta=4)
    assert strength_B(spec.scaled(2.0), 1.25) == pytest.approx(4 * strength_B(spec, 1.25))


def test_block_norm_matches_time_quadrature():
    spec = default_spec(K=16, J=5, K_eta=6)
    block = sample_block(spec, 7, 3)
    t = np.linspace(0, spec.T, 2001)
    f = block_force(block)
    vals = np.array([sobolev_norm(f(s), 0.5) ** 2 for s in t])
    quad = integrate.simpson(vals, x=t)
    assert quad == pytest.approx(float(block_norm_sq(spec, block.theta, 0.5)), rel=1e-6)


def test_noise_is_windowed():
    spec = default_spec(K=32, J=4, K_eta=8)
    block = sample_block(spec, 1, 0)
    u = evaluate_noise(block, 0.3)
    from nlslab.spectral import coeffs_to_grid, grid

    x = grid(256)
    vals = coeffs_to_grid(u.coeffs, 256)
    outside = np.abs(x - 1.25 * np.pi) > 0.25 * np.pi + 1.0 + 0.3
    assert np.max(np.abs(vals[outside])) < 1e-3 * np.max(np.abs(vals))
    with pytest.raises(ValueError):
        evaluate_noise(block, spec.T)


def test_block_csv(tmp_path):
    spec = default_spec(K=8, J=2, K_eta=2)
    block = sample_block(spec, 3, 0)
    block.to_csv(tmp_path / "b.csv")
    rows = np.loadtxt(tmp_path / "b.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 2:].reshape(block.theta.shape), block.theta)
