import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_field
from nlslab.spectral import (
    SpectralField,
    coeffs_to_grid,
    constant_profile,
    convolution_matrix,
    damping_bump,
    from_physical,
    generator,
    grid,
    grid_to_coeffs,
    multiply_profile,
    product_grid_size,
    project,
    propagate_damped,
    read_csv,
    read_snapshot,
    resize,
    sobolev_norm,
    to_physical,
    wavenumbers,
    window_bump,
    write_csv,
    write_snapshot,
)

finite = st.floats(-10, 10, allow_nan=False)


def complex_coeffs(K):
    return arrays(np.complex128, 2 * K + 1, elements=st.complex_numbers(max_magnitude=10, allow_nan=False))


@given(st.integers(0, 20).flatmap(lambda K: complex_coeffs(K)), st.integers(0, 8))
def test_grid_round_trip(c, extra):
    K = (c.size - 1) // 2
    M = 2 * K + 1 + extra
    np.testing.assert_allclose(grid_to_coeffs(coeffs_to_grid(c, M), K), c, atol=1e-10)


@given(st.integers(1, 16).flatmap(lambda K: complex_coeffs(K)))
def test_parseval(c):
    K = (c.size - 1) // 2
    M = 2 * K + 5
    u = coeffs_to_grid(c, M)
    assert np.sum(np.abs(u) ** 2) * 2 * np.pi / M == pytest.approx(np.sum(np.abs(c) ** 2), rel=1e-10, abs=1e-12)


def test_single_mode_is_normalized_exponential():
    K, M = 4, 32
    c = SpectralField.mode(K, 3).coeffs
    x = grid(M)
    np.testing.assert_allclose(coeffs_to_grid(c, M), np.exp(3j * x) / np.sqrt(2 * np.pi), atol=1e-14)


def test_aliasing_grid_rejected():
    with pytest.raises(ValueError):
        coeffs_to_grid(np.zeros(9, complex), 8)


@given(st.integers(0, 12), st.integers(0, 12))
def test_resize_pad_then_truncate(K, K2):
    c = np.arange(2 * K + 1) + 1j
    big = resize(c, K + K2)
    np.testing.assert_array_equal(resize(big, K), c)
    assert np.sum(np.abs(big) ** 2) == pytest.approx(np.sum(np.abs(c) ** 2))


@given(st.integers(1, 10).flatmap(lambda K: st.tuples(complex_coeffs(K), st.integers(0, K))))
def test_projections_split_field(args):
    c, m = args
    np.testing.assert_array_equal(project(c, m) + project(c, m, "high"), c)
    assert np.all(project(c, m)[np.abs(wavenumbers((c.size - 1) // 2)) > m] == 0)


def test_projection_level_checked():
    with pytest.raises(ValueError):
        project(np.zeros(5, complex), 3)


def test_sobolev_norm_monotone_in_s(rng):
    c = random_field(rng, 16)
    vals = [sobolev_norm(c, s) for s in (0, 0.5, 1, 2)]
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] == pytest.approx(np.linalg.norm(c))


def test_field_arithmetic_and_cutoff_mismatch():
    a = SpectralField.mode(3, 1, 2.0)
    b = SpectralField.mode(3, -1, 1j)
    assert (a + b)[1] == 2.0 and (a - b)[-1] == -1j
    assert (a * 3)[1] == 6.0
    with pytest.raises(ValueError):
        a + SpectralField.zeros(4)


def test_from_physical_rejects_nonuniform_grid():
    M = 16
    x = grid(M)
    u = from_physical(np.cos(2 * x), 4, x)
    assert abs(u[2]) == pytest.approx(np.sqrt(2 * np.pi) / 2)
    with pytest.raises(ValueError):
        from_physical(np.cos(2 * x), 4, x + 0.1)


def test_bump_profile_shape():
    from nlslab.spectral import circular_distance

    x = np.linspace(0, 2 * np.pi, 4001)
    for prof, c in ((damping_bump(), np.pi / 4), (window_bump(), 5 * np.pi / 4)):
        v = prof.values(x)
        d = circular_distance(x, c)
        assert np.all(v >= 0)
        np.testing.assert_allclose(v[d <= np.pi / 4], 1.0)
        assert np.all(v[d >= np.pi / 4 + 1.0] == 0)
        series = np.real(coeffs_to_grid(prof.coeffs, 4 * prof.cutoff + 2))
        xs = grid(series.size)
        np.testing.assert_allclose(series, prof.values(xs), atol=1e-12)


def test_convolution_matrix_matches_pointwise_product(rng):
    K = 12
    c = random_field(rng, K)
    a = damping_bump()
    np.testing.assert_allclose(convolution_matrix(a, K) @ c, multiply_profile(c, a), atol=1e-12)


def test_constant_profile_multiplies():
    c = np.arange(5) + 1j
    np.testing.assert_allclose(multiply_profile(c, constant_profile(0.3)), 0.3 * c)


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.01, 3.0))
def test_damped_flow_does_not_increase_l2(seed, t):
    c = random_field(np.random.default_rng(seed), 10, decay=1.0)
    out = propagate_damped(c, t, damping_bump())
    assert np.linalg.norm(out) <= np.linalg.norm(c) * (1 + 1e-12)


def test_damped_flow_constant_closed_form(rng):
    K, a0, t = 8, 0.4, 1.3
    c = random_field(rng, K)
    k = wavenumbers(K)
    np.testing.assert_allclose(propagate_damped(c, t, constant_profile(a0)),
                               c * np.exp((-1j * k * k - a0) * t), atol=1e-14)


def test_split_steps_converge_second_order(rng):
    K = 8
    c = random_field(rng, K, 3.0)
    a = damping_bump()
    ref = propagate_damped(c, 1.0, a)
    errs = [np.linalg.norm(propagate_damped(c, 1.0, a, "split-steps", dt) - ref) for dt in (0.02, 0.01, 0.005)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.6) & (ratios < 4.4))


def test_backward_flow_only_without_damping(rng):
    c = random_field(rng, 6)
    zero = constant_profile(0.0)
    np.testing.assert_allclose(propagate_damped(propagate_damped(c, 0.7, zero), -0.7, zero), c, atol=1e-13)
    with pytest.raises(ValueError):
        propagate_damped(c, -0.1, damping_bump())


def test_generator_dissipative():
    assert generator(damping_bump(), 16).symmetric_part_max <= 1e-12


def test_product_grid_is_alias_free(rng):
    K = 10
    c = random_field(rng, K, 0.0)
    M = product_grid_size(K)
    big = 8 * K + 16
    exact = grid_to_coeffs(np.abs(coeffs_to_grid(c, big)) ** 2 * coeffs_to_grid(c, big), K)
    padded = grid_to_coeffs(np.abs(coeffs_to_grid(c, M)) ** 2 * coeffs_to_grid(c, M), K)
    np.testing.assert_allclose(padded, exact, atol=1e-12)


def test_snapshot_and_csv_round_trip(tmp_path, rng):
    u = SpectralField(random_field(rng, 7))
    write_snapshot(tmp_path / "u.nlsf", u)
    np.testing.assert_array_equal(read_snapshot(tmp_path / "u.nlsf").coeffs, u.coeffs)
    write_csv(tmp_path / "u.csv", u)
    np.testing.assert_array_equal(read_csv(tmp_path / "u.csv").coeffs, u.coeffs)


def test_corrupt_snapshot_rejected(tmp_path):
    u = SpectralField.mode(3, 1)
    p = tmp_path / "u.nlsf"
    write_snapshot(p, u)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="corrupt"):
        read_snapshot(p)
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError, match="magic"):
        read_snapshot(p)


def test_to_physical_matches_coeffs_to_grid(rng):
    u = SpectralField(random_field(rng, 5))
    np.testing.assert_array_equal(to_physical(u, 16), coeffs_to_grid(u.coeffs, 16))
