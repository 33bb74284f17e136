import numpy as np
import pytest
import scipy.linalg as sla
from scipy import integrate

from conftest import random_field
from nlslab.control import ControlProblem, regular_reference
from nlslab.diagnostics import (
    CarlemanConfig,
    alpha_x_identity,
    carleman_check,
    carleman_weights,
    counterexample_run,
    duhamel_smoothing_check,
    energy_decay_fit,
    flux_check,
    hf_dissipation_check,
    l2_observability_check,
    l2_observability_ratio,
    observability_gramian,
    rough_data,
)
from nlslab.dynamics import IntegrationError, Model, evolve
from nlslab.noise import block_force, default_spec, sample_block
from nlslab.spectral import constant_profile, convolution_matrix, damping_bump, generator, japanese


def test_weight_function_shape():
    cfg = CarlemanConfig()
    x = np.linspace(0, 2 * np.pi, 4001)
    ph = cfg.phi(x)
    assert ph.min() >= -1e-9
    assert cfg.phi_sup * (1 - 1e-5) <= ph.max() <= cfg.phi_sup + 1e-9
    assert integrate.simpson(cfg.phi_prime(x), x=x) == pytest.approx(0.0, abs=1e-9)
    # phi' is the slope outside the observation interval
    out = ~cfg.in_interval(x)
    np.testing.assert_allclose(cfg.phi_prime(x[out]), cfg.slope)
    h = 1e-5
    fd = (cfg.phi(x + h) - cfg.phi(x - h)) / (2 * h)
    assert np.max(np.abs(fd - cfg.phi_prime(x))) < 1e-3
    assert cfg.in_interval(x[np.argmax(ph)])


def test_alpha_derivative_identity():
    assert alpha_x_identity(CarlemanConfig()) < 1e-8


def test_log_weights_match_direct_formula():
    cfg = CarlemanConfig(s_c=1.0, lam=1.0)
    t = np.array([0.2, 0.5])
    x = np.linspace(0, 2 * np.pi, 9)
    log_w, log_b = carleman_weights(cfg, 1.0, t, x)
    np.testing.assert_allclose(log_w, -2 * cfg.s_c * cfg.alpha(t, x), rtol=1e-9)
    m = cfg.phi_sup
    np.testing.assert_allclose(np.exp(log_b), np.exp(cfg.lam * (cfg.phi(x) + 2 * m))[None] / (t * (1 - t))[:, None])


def test_carleman_config_validation():
    with pytest.raises(ValueError):
        CarlemanConfig(s_c=0.5)
    with pytest.raises(ValueError):
        CarlemanConfig(half_width=4.0)


def test_carleman_check_finite_and_zero(rng):
    model = Model(K=16, dt=1e-2)
    tr = evolve(random_field(rng, 16), 1.0, model)
    r = carleman_check(tr)
    assert np.isfinite(r.value) and r.value > 0 and r.passed
    assert carleman_check(evolve(np.zeros(33, complex), 0.1, model)).value == 0.0


def test_flux_constant_linear_closed_form():
    a0, T = 0.7, 1.0
    model = Model(K=8, dt=1e-3, a=constant_profile(a0), nonlinear=False)
    c = 1e-4 * random_field(np.random.default_rng(1), 8)
    r = flux_check(evolve(c, T, model))
    assert r.value == pytest.approx(1 / (1 - np.exp(-2 * a0 * T)), rel=1e-5)


def test_flux_with_force_is_finite():
    model = Model(K=24, dt=1e-2)
    spec = default_spec(K=24, J=4, K_eta=8)
    f = block_force(sample_block(spec, 0, 0))
    tr = evolve(np.zeros(49, complex), 1.0, model, force=f)
    r = flux_check(tr, f)
    assert np.isfinite(r.value) and r.value > 0


def test_gramian_against_quadrature():
    a, K, T = damping_bump(), 5, 1.0
    gen = generator(a, K)
    A = convolution_matrix(a, K)
    f = lambda t: gen.expm(t).conj().T @ A @ gen.expm(t)
    Q = integrate.quad_vec(f, 0, T, epsabs=1e-12)[0]
    np.testing.assert_allclose(observability_gramian(a, K, T), Q, atol=1e-10)


def test_l2_ratio_constant_and_zero(rng):
    u0 = np.array([random_field(rng, 8) for _ in range(4)])
    a0 = 0.6
    np.testing.assert_allclose(l2_observability_ratio(constant_profile(a0), u0, 1.0),
                               (1 - np.exp(-2 * a0)) / 2, atol=1e-12)
    assert np.all(l2_observability_ratio(constant_profile(0.0), u0, 1.0) == 0)


def test_l2_check_positive():
    r = l2_observability_check(damping_bump(), K=16, samples=50)
    assert r.passed and r.value >= r.extras["gramian_min"] - 1e-12


def test_rough_data_decay():
    c = rough_data(32, seed=2)
    np.testing.assert_allclose(np.abs(c), japanese(32) ** -1.5)


def test_duhamel_check_zero_and_validation():
    model = Model(K=8, dt=1e-2)
    r = duhamel_smoothing_check(np.zeros(17, complex), model, horizon=0.5)
    assert r.value == 0.0
    with pytest.raises(ValueError):
        duhamel_smoothing_check(np.zeros(17, complex), model, sigma=0.5)


def test_hf_dissipation_slope_negative():
    model = Model(K=32, dt=1e-2)
    pb = ControlProblem(regular_reference(model, seed=2), m=1, N=1)
    v0 = random_field(np.random.default_rng(3), 32, 2.0)
    r = hf_dissipation_check(pb, v0, (4, 8, 16))
    assert r.value < 0
    with pytest.raises(ValueError):
        hf_dissipation_check(pb, v0, (4, 8))


def test_counterexample_conserves_mode_magnitudes():
    v0 = np.zeros(17, complex)
    v0[8 + 1] = 1.0
    assert counterexample_run(1.0, v0, T=1.0, dt=1e-3).value < 1e-6
    r = counterexample_run(1.0, random_field(np.random.default_rng(0), 8), T=0.5, dt=1e-3)
    assert r.passed
    with pytest.raises(IntegrationError):
        counterexample_run(1.0, np.zeros(17, complex), T=0.01)


def test_energy_decay_constant_linear():
    a0 = 0.3
    model = Model(K=8, dt=1e-2, a=constant_profile(a0), nonlinear=False)
    # tiny data: the quartic part of E, decaying at 4 a0, is negligible
    r = energy_decay_fit(1e-5 * random_field(np.random.default_rng(0), 8), model, horizon=5.0, sample_every=10)
    assert r.value == pytest.approx(2 * a0, rel=1e-8)
    assert r.extras["r2"] == pytest.approx(1.0)
