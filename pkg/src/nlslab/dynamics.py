"""Strang-split integration of the damped, forced defocusing NLS

    i u_t + u_xx + i a(x) u = |u|^(p-1) u + f(t, x)

and the energy functionals used to monitor it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .spectral import (
    SQRT_2PI,
    SmoothProfile,
    SpectralField,
    as_coeffs,
    coeffs_to_grid,
    convolution_matrix,
    cutoff_of,
    damping_bump,
    fast_len,
    resize,
    generator,
    grid_to_coeffs,
    japanese,
    product_grid_size,
    read_snapshot,
    sobolev_norm,
    wavenumbers,
    write_snapshot,
)

BLOWUP_H1 = 1e6

ForceFn = Callable[[float], np.ndarray]


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last valid time {t_last:.6g})")
        self.t_last = t_last


@dataclass(frozen=True)
class Model:
    """Physical and numerical parameters shared by every solver."""

    K: int = 64
    p: int = 3
    dt: float = 1e-3
    a: SmoothProfile = field(default_factory=damping_bump)
    nonlinear: bool = True

    def __post_init__(self):
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError("p must be odd and >= 3")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def M(self) -> int:
        return product_grid_size(self.K, self.p)

    @property
    def generator(self):
        return generator(self.a, self.K)

    def half_step(self, dt: float | None = None) -> np.ndarray:
        """Transpose of exp(L_a dt/2), ready for right-multiplication of row batches."""
        h = self.dt if dt is None else dt
        return self.generator.expm(0.5 * h).T

    def with_(self, **kw) -> "Model":
        d = dict(K=self.K, p=self.p, dt=self.dt, a=self.a, nonlinear=self.nonlinear)
        d.update(kw)
        return Model(**d)


def nonlinear_rotation(w: np.ndarray, model: Model, dt: float) -> np.ndarray:
    """Exact flow of i u_t = |u|^(p-1) u over dt on the padded grid, truncated to K."""
    if not model.nonlinear:
        return w
    M = model.M
    g = coeffs_to_grid(w, M)
    mod2 = g.real ** 2 + g.imag ** 2
    g = g * np.exp(-1j * dt * mod2 ** ((model.p - 1) // 2))
    return grid_to_coeffs(g, model.K)


def strang_step(c: np.ndarray, t: float, model: Model, force: ForceFn | None = None,
                dt: float | None = None, E: np.ndarray | None = None,
                f_mid: np.ndarray | None = None) -> np.ndarray:
    """One step; works on a single coefficient vector or a batch of rows."""
    h = model.dt if dt is None else dt
    if E is None:
        E = model.half_step(h)
    w = c @ E
    if f_mid is None and force is not None:
        f_mid = force(t + 0.5 * h)
    if f_mid is not None:
        w = w - 0.5j * h * f_mid
    w = nonlinear_rotation(w, model, h)
    if f_mid is not None:
        w = w - 0.5j * h * f_mid
    return w @ E


def step(u: SpectralField, dt: float, force_at: Callable | None = None, p: int = 3,
         a: SmoothProfile | None = None, t: float = 0.0) -> SpectralField:
    model = Model(K=u.K, p=p, dt=dt, a=damping_bump() if a is None else a)
    force = None
    if force_at is not None:
        force = lambda s: as_coeffs(force_at(s))
    return SpectralField(strang_step(u.coeffs, t, model, force))


def _check_finite(c: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(c)):
        raise IntegrationError("non-finite coefficients", t)
    h1 = np.max(sobolev_norm(c, 1.0))
    if h1 > BLOWUP_H1:
        raise IntegrationError(f"H^1 norm {h1:.3g} exceeds blow-up guard", t)


@dataclass
class Trajectory:
    """Uniformly sampled solution; `fields[n]` is the state at `t0 + n*dt`.

    `force_mid[n]` is the forcing used inside step n (sampled at its midpoint),
    which is what the linearized solvers need to rebuild the inner states.
    """

    t0: float
    dt: float
    fields: np.ndarray
    model: Model
    force_mid: np.ndarray | None = None
    forcing: str = "none"
    seed: int | None = None

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.fields.shape[0])

    @property
    def n_steps(self) -> int:
        return self.fields.shape[0] - 1

    @property
    def K(self) -> int:
        return cutoff_of(self.fields)

    def field(self, n: int) -> SpectralField:
        return SpectralField(self.fields[n])

    @property
    def terminal(self) -> SpectralField:
        return SpectralField(self.fields[-1])

    def inner_states(self) -> np.ndarray:
        """States fed to the nonlinear substep of each step."""
        w = self.fields[:-1] @ self.model.half_step(self.dt)
        if self.force_mid is not None:
            w = w - 0.5j * self.dt * self.force_mid
        return w

    def export(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        names = []
        for n, c in enumerate(self.fields):
            name = f"snap_{n:06d}.nlsf"
            write_snapshot(d / name, SpectralField(c))
            names.append(name)
        index = dict(times=[float(t) for t in self.times], dt=self.dt, K=self.K, p=self.model.p,
                     forcing=self.forcing, seed=self.seed, files=names)
        path = d / "index.json"
        path.write_text(json.dumps(index, indent=1))
        return path


def load_trajectory(index_path, model: Model) -> Trajectory:
    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    fields = np.array([read_snapshot(index_path.parent / f).coeffs for f in index["files"]])
    return Trajectory(index["times"][0], index["dt"], fields, model, forcing=index["forcing"],
                      seed=index["seed"])


def evolve(u0, t_final: float, model: Model, force: ForceFn | None = None, t0: float = 0.0,
           store: bool = True, forcing: str = "none", seed: int | None = None) -> Trajectory:
    """Integrate from t0 to t0 + t_final with the model's step size."""
    c = np.array(as_coeffs(u0), dtype=complex)
    n = int(round(t_final / model.dt))
    if n < 1 or abs(n * model.dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"interval {t_final} is not a whole number of steps of {model.dt}")
    E = model.half_step()
    fields = np.empty((n + 1,) + c.shape, dtype=complex) if store else None
    fmid = np.empty((n,) + c.shape, dtype=complex) if (store and force is not None) else None
    if store:
        fields[0] = c
    for i in range(n):
        t = t0 + i * model.dt
        f = None if force is None else np.asarray(force(t + 0.5 * model.dt))
        c = strang_step(c, t, model, E=E, f_mid=f)
        if i % 16 == 15 or i == n - 1:
            _check_finite(c, t + model.dt)
        if store:
            fields[i + 1] = c
            if fmid is not None:
                fmid[i] = f
    if not store:
        fields = c[None]
    return Trajectory(t0, model.dt, fields, model, force_mid=fmid, forcing=forcing, seed=seed)


# ---------------------------------------------------------------- energies

def potential_integral(c: np.ndarray, p: int, M: int | None = None) -> np.ndarray:
    """Integral of |u|^(p+1) by exact padded quadrature."""
    K = cutoff_of(c)
    M = product_grid_size(K, p) if M is None else M
    g = coeffs_to_grid(c, M)
    return np.sum((g.real ** 2 + g.imag ** 2) ** ((p + 1) // 2), axis=-1) * (2 * np.pi / M)


def lp_norm_power(c: np.ndarray, q: int) -> np.ndarray:
    """Integral of |u|^q for even q, exact on the truncated space."""
    K = cutoff_of(c)
    M = product_grid_size(K, q - 1)
    g = coeffs_to_grid(c, M)
    return np.sum((g.real ** 2 + g.imag ** 2) ** (q // 2), axis=-1) * (2 * np.pi / M)


def energy(u, p: int = 3) -> float | np.ndarray:
    """E(u) = 1/2 ||u||^2 + 1/2 ||u_x||^2 + 1/(p+1) int |u|^(p+1)."""
    c = as_coeffs(u)
    k2 = wavenumbers(cutoff_of(c)).astype(float) ** 2
    quad = 0.5 * np.sum((1.0 + k2) * np.abs(c) ** 2, axis=-1)
    return quad + potential_integral(c, p) / (p + 1)


def modified_energy(u, p: int = 3, L: float = 0.0) -> float:
    if L < 0:
        raise ValueError("L must be nonnegative")
    c = as_coeffs(u)
    E = energy(c, p)
    out = E + 0.5 * L * np.sum(np.abs(c) ** 2, axis=-1)
    assert np.all(out >= E - 1e-12) and np.all(out <= (1 + L) * E + 1e-12)
    return out


def _profile_pair(c: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Integral of a(x)|u|^2 = (A c, c) with A the convolution matrix of a."""
    return np.real(np.einsum("...i,ij,...j->...", np.conj(c), A, c))


def energy_identity_residuals(traj: Trajectory, force: ForceFn | None = None) -> dict:
    """Centered-difference residuals of the mass and energy balance laws.

    mass:   d/dt 1/2||u||^2 = -int a|u|^2 + Im int f conj(u)
    energy: d/dt E = -int a(|u|^2 + |u_x|^2 + |u|^(p+1)) + 1/2 int a''|u|^2
                     + int [Im(f conj u) - a Re(f conj u) - Re(f conj u_t)]
    """
    U = traj.fields
    if U.shape[0] < 3:
        raise ValueError("need at least three samples for centered differences")
    model = traj.model
    p, K, dt = model.p, traj.K, traj.dt
    t = traj.times
    k = wavenumbers(K).astype(float)
    A = convolution_matrix(model.a, K)
    App = _second_derivative_matrix(model.a, K)

    mass = 0.5 * np.sum(np.abs(U) ** 2, axis=-1)
    En = energy(U, p)
    inner = slice(1, -1)
    dmass = (mass[2:] - mass[:-2]) / (2 * dt)
    dE = (En[2:] - En[:-2]) / (2 * dt)
    Ui = U[inner]
    Ux = Ui * (1j * k)
    flux = (_profile_pair(Ui, A) + _profile_pair(Ux, A)
            + weighted_potential_integral(Ui, p, model.a))
    curv = 0.5 * _profile_pair(Ui, App)
    rhs_mass = -_profile_pair(Ui, A)
    rhs_E = -flux + curv
    if force is not None:
        F = np.array([as_coeffs(force(s)) for s in t[inner]])
        ut = (U[2:] - U[:-2]) / (2 * dt)
        fu = np.sum(F * np.conj(Ui), axis=-1)
        rhs_mass = rhs_mass + np.imag(fu)
        aRe = np.real(np.einsum("...i,ij,...j->...", np.conj(Ui), A, F))
        rhs_E = rhs_E + np.imag(fu) - aRe - np.real(np.sum(F * np.conj(ut), axis=-1))
    r_mass = dmass - rhs_mass
    r_E = dE - rhs_E
    span = t[-2] - t[1] if len(t) > 3 else 1.0
    return dict(
        mass_max=float(np.max(np.abs(r_mass))),
        mass_l2=float(np.sqrt(np.sum(r_mass ** 2) * dt / max(span, dt))),
        energy_max=float(np.max(np.abs(r_E))),
        energy_l2=float(np.sqrt(np.sum(r_E ** 2) * dt / max(span, dt))),
        mass_series=r_mass,
        energy_series=r_E,
    )


def _second_derivative_matrix(a: SmoothProfile, K: int) -> np.ndarray:
    k = wavenumbers(K)
    diff = np.subtract.outer(k, k)
    Kp = a.cutoff
    full = np.zeros(4 * K + 1, dtype=complex)
    kk = min(Kp, 2 * K)
    seg = a.derivative_coeffs(2)[Kp - kk:Kp + kk + 1]
    full[2 * K - kk:2 * K + kk + 1] = seg
    return full[diff + 2 * K] / SQRT_2PI


def weighted_potential_integral(c: np.ndarray, p: int, a: SmoothProfile) -> np.ndarray:
    """Integral of a(x)|u|^(p+1), pairing the exact coefficients of |u|^(p+1) with those of a."""
    K = cutoff_of(c)
    Kg = (p + 1) * K
    g = coeffs_to_grid(c, fast_len(2 * Kg + 1))
    G = grid_to_coeffs((g.real ** 2 + g.imag ** 2) ** ((p + 1) // 2) + 0j, Kg)
    ac = resize(a.coeffs, Kg)
    return np.real(np.sum(ac * np.conj(G), axis=-1))

