import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_field
from nlslab.dynamics import (
    IntegrationError,
    Model,
    energy,
    energy_identity_residuals,
    evolve,
    load_trajectory,
    modified_energy,
    potential_integral,
    step,
)
from nlslab.spectral import (
    SpectralField,
    coeffs_to_grid,
    constant_profile,
    multiply_profile,
    wavenumbers,
    window_bump,
)


def plane_wave_exact(K, k0, amp, t, a0=0.0):
    """Closed form for a single mode: |u|^2 = amp^2 e^{-2 a0 t} / (2 pi) is constant in x."""
    c = np.zeros(2 * K + 1, complex)
    if a0 == 0:
        phase = amp ** 2 * t / (2 * np.pi)
    else:
        phase = amp ** 2 * (1 - np.exp(-2 * a0 * t)) / (2 * a0) / (2 * np.pi)
    c[K + k0] = amp * np.exp(-a0 * t) * np.exp(-1j * (k0 * k0 * t + phase))
    return c


@pytest.mark.parametrize("a0", [0.0, 0.5])
def test_plane_wave_closed_form(a0):
    K, k0, amp = 8, 3, 1.7
    u0 = plane_wave_exact(K, k0, amp, 0.0)
    model = Model(K=K, dt=1e-3, a=constant_profile(a0))
    out = evolve(u0, 1.0, model, store=False).fields[-1]
    assert np.max(np.abs(out - plane_wave_exact(K, k0, amp, 1.0, a0))) < 1e-6


def test_zero_is_fixed_point():
    out = evolve(np.zeros(33, complex), 0.5, Model(K=16), store=True)
    assert not np.any(out.fields)


def test_self_convergence_second_order(rng):
    K = 16
    c = random_field(rng, K, 2.6)
    finals = [evolve(c, 0.5, Model(K=K, dt=dt), store=False).fields[-1] for dt in (4e-3, 2e-3, 1e-3, 5e-4)]
    e = [np.linalg.norm(finals[i] - finals[i + 1]) for i in range(3)]
    assert 3.6 <= e[0] / e[1] <= 4.4 and 3.6 <= e[1] / e[2] <= 4.4


@given(st.integers(0, 2 ** 31 - 1))
def test_unforced_mass_decreases(seed):
    c = random_field(np.random.default_rng(seed), 8, 2.0)
    tr = evolve(c, 0.2, Model(K=8, dt=1e-2))
    mass = np.sum(np.abs(tr.fields) ** 2, axis=1)
    assert np.all(np.diff(mass) <= 1e-13 * mass[0])


def test_undamped_mass_loss_is_truncation_only(rng):
    # the rotation is unitary on the grid; only the projection back to |k| <= K can remove mass
    c = random_field(rng, 8)
    tr = evolve(c, 0.5, Model(K=8, dt=1e-2, a=constant_profile(0.0)))
    mass = np.sum(np.abs(tr.fields) ** 2, axis=1)
    assert np.all(np.diff(mass) <= 1e-14 * mass[0])
    lin = evolve(c, 0.5, Model(K=8, dt=1e-2, a=constant_profile(0.0), nonlinear=False))
    np.testing.assert_allclose(np.sum(np.abs(lin.fields) ** 2, axis=1), mass[0], rtol=1e-13)


def test_batch_matches_single(rng):
    K = 8
    U = np.array([random_field(rng, K) for _ in range(3)])
    model = Model(K=K, dt=1e-2)
    batch = evolve(U, 0.1, model, store=False).fields[-1]
    for i in range(3):
        np.testing.assert_allclose(batch[i], evolve(U[i], 0.1, model, store=False).fields[-1], atol=1e-14)


def test_linear_model_matches_damped_group(rng):
    from nlslab.spectral import propagate_damped

    c = random_field(rng, 8)
    model = Model(K=8, dt=1e-2, nonlinear=False)
    np.testing.assert_allclose(evolve(c, 1.0, model, store=False).fields[-1],
                               propagate_damped(c, 1.0, model.a), atol=1e-12)


def test_energy_of_mode():
    c = np.zeros(9, complex)
    c[4 + 2] = 1.0
    assert energy(c) == pytest.approx(0.5 * 5 + 0.25 / (2 * np.pi))
    assert potential_integral(c, 3) == pytest.approx(1 / (2 * np.pi))
    assert modified_energy(c, 3, 2.0) == pytest.approx(energy(c) + 1.0)


def test_energy_identities_order(rng):
    K = 16
    k = wavenumbers(K)
    c = random_field(rng, K, 3.0)
    base = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * np.exp(-np.abs(k))
    chi = window_bump()
    force = lambda t: multiply_profile(base * np.cos(3 * t), chi)
    res = []
    for dt in (4e-3, 2e-3, 1e-3):
        r = energy_identity_residuals(evolve(c, 1.0, Model(K=K, dt=dt), force=force), force)
        res.append((r["mass_l2"], r["energy_l2"]))
    res = np.array(res)
    order = np.log2(res[:-1] / res[1:])
    assert np.all(order >= 1.8)


def test_energy_identities_zero_exact():
    r = energy_identity_residuals(evolve(np.zeros(17, complex), 0.1, Model(K=8, dt=1e-2)))
    assert r["mass_max"] == 0.0 and r["energy_max"] == 0.0


def test_non_finite_state_raises():
    c = np.zeros(9, complex)
    c[3] = np.nan
    with pytest.raises(IntegrationError):
        evolve(c, 0.2, Model(K=4, dt=1e-2))


def test_interval_must_be_whole_steps():
    with pytest.raises(ValueError):
        evolve(np.zeros(9, complex), 0.0105, Model(K=4, dt=1e-2))


def test_model_validation():
    with pytest.raises(ValueError):
        Model(p=4)
    with pytest.raises(ValueError):
        Model(dt=0)


def test_field_step_wrapper(rng):
    u = SpectralField(random_field(rng, 6))
    model = Model(K=6, dt=1e-2)
    np.testing.assert_allclose(step(u, 1e-2).coeffs, evolve(u.coeffs, 1e-2, model, store=False).fields[-1])


def test_export_round_trip(tmp_path, rng):
    model = Model(K=4, dt=0.1)
    tr = evolve(random_field(rng, 4), 0.3, model)
    back = load_trajectory(tr.export(tmp_path), model)
    np.testing.assert_array_equal(back.fields, tr.fields)
    np.testing.assert_allclose(back.times, tr.times)


def test_inner_states_reproduce_steps(rng):
    from nlslab.dynamics import nonlinear_rotation

    model = Model(K=6, dt=1e-2)
    tr = evolve(random_field(rng, 6), 0.05, model)
    w = tr.inner_states()
    E = model.half_step()
    for n in range(tr.n_steps):
        np.testing.assert_allclose(nonlinear_rotation(w[n], model, model.dt) @ E, tr.fields[n + 1], atol=1e-14)


def test_grid_values_of_state_are_finite(rng):
    tr = evolve(random_field(rng, 8), 0.1, Model(K=8, dt=1e-2))
    assert np.all(np.isfinite(coeffs_to_grid(tr.fields, 64)))
