"""Empirical checks of the functional inequalities on computed solutions.

Every check returns a `CheckResult` carrying (value, threshold, passed) plus
diagnostic extras.  Inequalities are reported as finite empirical constants,
never as proofs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.special import logsumexp

from .dynamics import (
    IntegrationError,
    Model,
    Trajectory,
    _profile_pair,
    energy,
    evolve,
    weighted_potential_integral,
)
from .resonance import gauge_phase
from .spectral import (
    SmoothProfile,
    _smooth_step,
    as_coeffs,
    circular_distance,
    coeffs_to_grid,
    convolution_matrix,
    generator,
    japanese,
    project,
    sobolev_norm,
    wavenumbers,
)


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    extras: dict = field(default_factory=dict)

    def row(self) -> dict:
        return dict(name=self.name, value=self.value, threshold=self.threshold, passed=self.passed)


# ------------------------------------------------------------------ Carleman

@dataclass(frozen=True)
class CarlemanConfig:
    """Observation interval (center, half_width), slope of the weight outside it,
    Carleman parameters s_c and lam, and the resolution of the weight's table."""

    center: float = np.pi / 4
    half_width: float = np.pi / 8
    slope: float = 1.0
    s_c: float = 4.0
    lam: float = 4.0
    n_table: int = 1 << 14

    def __post_init__(self):
        if self.s_c < 1 or self.lam < 1:
            raise ValueError("Carleman parameters must be >= 1")
        if not 0 < self.half_width < np.pi:
            raise ValueError("interval half-width must lie in (0, pi)")

    def in_interval(self, x) -> np.ndarray:
        return circular_distance(np.asarray(x, dtype=float), self.center) < self.half_width

    def _sink(self, x) -> np.ndarray:
        """Smooth bump supported in the interval, normalized to integrate to 2 pi * slope."""
        d = circular_distance(np.asarray(x, dtype=float), self.center) / self.half_width
        return _smooth_step(2.0 * (1.0 - d))

    @property
    def _sink_mass(self) -> float:
        x = 2 * np.pi * np.arange(self.n_table) / self.n_table
        return float(np.sum(self._sink(x)) * 2 * np.pi / self.n_table)

    def phi_prime(self, x) -> np.ndarray:
        """slope outside the interval; drops inside it so the weight closes up on the circle."""
        return self.slope * (1.0 - 2 * np.pi * self._sink(x) / self._sink_mass)

    @property
    def _table(self) -> tuple[np.ndarray, np.ndarray]:
        return _phi_table(self)

    def phi(self, x) -> np.ndarray:
        coef, _ = self._table
        x = np.asarray(x, dtype=float)
        k = np.arange(-(len(coef) // 2), len(coef) // 2 + 1)
        return np.real(np.exp(1j * np.multiply.outer(x, k)) @ coef)

    @property
    def phi_sup(self) -> float:
        return self._table[1]

    def alpha(self, t, x, T: float = 1.0) -> np.ndarray:
        """Weight alpha on the (t, x) mesh; overflows for large lam, use carleman_weights there."""
        t = np.asarray(t, dtype=float)
        m = self.phi_sup
        num = np.exp(4 * self.lam * m) - np.exp(self.lam * (self.phi(x) + 2 * m))
        return np.multiply.outer(1.0 / (t * (T - t)), num)


@lru_cache(maxsize=8)
def _phi_table(cfg: CarlemanConfig) -> tuple[np.ndarray, float]:
    """Fourier coefficients of phi (zero mean shifted to nonnegative) and its sup norm."""
    n = cfg.n_table
    x = 2 * np.pi * np.arange(n) / n
    d = np.fft.fft(cfg.phi_prime(x)) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(k != 0, d / (1j * k), 0.0)
    kmax = 2000
    sel = np.r_[np.arange(-kmax, 0) % n, np.arange(0, kmax + 1)]
    coef = c[sel]
    vals = np.real(np.fft.ifft(c) * n)
    coef[kmax] = -vals.min()
    return coef, float(vals.max() - vals.min())


def carleman_weights(cfg: CarlemanConfig, T: float, t: np.ndarray, x: np.ndarray):
    """log e^{-2 s alpha} and beta on the (t, x) mesh, formed without overflow."""
    ph = cfg.phi(x)
    m = cfg.phi_sup
    lam = cfg.lam
    tt = t * (T - t)
    # alpha = e^{4 lam m} (1 - e^{lam (phi - 2m)}) / tt, beta = e^{lam(phi + 2m)} / tt
    log_alpha = 4 * lam * m + np.log1p(-np.exp(lam * (ph - 2 * m)))[None, :] - np.log(tt)[:, None]
    log_beta = lam * (ph + 2 * m)[None, :] - np.log(tt)[:, None]
    log_w = -2 * cfg.s_c * np.exp(log_alpha)
    return log_w, log_beta


def alpha_x_identity(cfg: CarlemanConfig, T: float = 1.0, n: int = 64, h: float = 1e-6) -> float:
    """max relative gap between a centered difference of alpha in x and -lam beta phi'.

    The difference alpha(x+h) - alpha(x-h) is formed as
    -beta(x-h) expm1(lam (phi(x+h) - phi(x-h))), which avoids cancelling the
    large constant part of alpha.
    """
    x = np.linspace(0.1, 2 * np.pi - 0.1, n)
    t = np.array([0.3 * T, 0.5 * T])
    lam, m = cfg.lam, cfg.phi_sup
    tt = (t * (T - t))[:, None]
    beta_lo = np.exp(lam * (cfg.phi(x - h) + 2 * m))[None, :] / tt
    num = -beta_lo * np.expm1(lam * (cfg.phi(x + h) - cfg.phi(x - h)))[None, :] / (2 * h)
    beta = np.exp(lam * (cfg.phi(x) + 2 * m))[None, :] / tt
    exact = -lam * beta * cfg.phi_prime(x)[None, :]
    return float(np.max(np.abs(num - exact)) / np.max(np.abs(exact)))


def _log_integral(log_w: np.ndarray, dens: np.ndarray, cell: float) -> float:
    with np.errstate(divide="ignore"):
        ld = np.log(dens)
    return float(logsumexp(log_w + ld) + np.log(cell))


def carleman_check(traj: Trajectory, f=None, cfg: CarlemanConfig | None = None,
                   M: int | None = None, C_max: float = 1e3) -> CheckResult:
    """Both sides of the weighted estimate for the trajectory, in log form.

    Time quadrature is the open trapezoid on the trajectory grid (weights vanish
    to all orders at both ends).  The source is h = -i a u + f.
    Returns C_needed = lhs / rhs; ratio = rhs / lhs is stored among the extras.
    """
    cfg = CarlemanConfig() if cfg is None else cfg
    model = traj.model
    p, K = model.p, traj.K
    M = 4 * K if M is None else M
    T = traj.n_steps * traj.dt
    t = traj.times[1:-1] - traj.t0
    U = traj.fields[1:-1]
    if not np.any(U):
        return CheckResult("carleman", 0.0, C_max, True, dict(lhs_log=-np.inf, rhs_log=-np.inf, ratio=np.nan))
    x = 2 * np.pi * np.arange(M) / M
    k = wavenumbers(K)
    u = coeffs_to_grid(U, M)
    ux = coeffs_to_grid(U * (1j * k), M)
    au = coeffs_to_grid(U @ convolution_matrix(model.a, K).T, M)
    h = -1j * au
    if f is not None:
        h = h + coeffs_to_grid(np.array([as_coeffs(f(s)) for s in traj.times[1:-1]]), M)
    mod2 = np.abs(u) ** 2
    psi = (p - 1) / (p + 1) * mod2 ** ((p + 1) / 2)
    log_w, log_b = carleman_weights(cfg, T, t, x)
    s, lam = cfg.s_c, cfg.lam
    cell = traj.dt * 2 * np.pi / M
    inside = cfg.in_interval(x)[None, :]

    def sides(mask):
        lw = np.where(mask, log_w, -np.inf)
        terms = [
            np.log(s ** 3 * lam ** 4) + _log_integral(lw + 3 * log_b, mod2, cell),
            np.log(s * lam ** 2) + _log_integral(lw + log_b, np.abs(ux) ** 2, cell),
            np.log(s ** 2 * lam ** 2) + _log_integral(lw + 2 * log_b, psi, cell),
        ]
        return terms

    lhs = float(logsumexp(sides(np.ones_like(inside))))
    obs = sides(inside)
    src = _log_integral(log_w, np.abs(h) ** 2, cell)
    rhs = float(logsumexp(obs + [src]))
    C_needed = float(np.exp(lhs - rhs))
    return CheckResult("carleman", C_needed, C_max, bool(np.isfinite(C_needed) and C_needed < C_max),
                       dict(lhs_log=lhs, rhs_log=rhs, ratio=float(np.exp(rhs - lhs))))


# ---------------------------------------------------------------------- flux

def flux_check(traj: Trajectory, f=None) -> CheckResult:
    """Empirical C2 = max_t E(t) / [flux + int |f|^2 + int ||f||_{H^1}(E^{1/2} + E^{p/(p+1)})]."""
    model = traj.model
    U, dt, p, K = traj.fields, traj.dt, model.p, traj.K
    En = energy(U, p)
    if not np.any(U):
        return CheckResult("flux", 0.0, np.inf, True)
    A = convolution_matrix(model.a, K)
    k = wavenumbers(K)
    dens = _profile_pair(U, A) + _profile_pair(U * (1j * k), A) + weighted_potential_integral(U, p, model.a)
    rhs = _trapezoid(dens, dt)
    if f is not None:
        F = np.array([as_coeffs(f(s)) for s in traj.times])
        rhs += _trapezoid(np.sum(np.abs(F) ** 2, axis=-1), dt)
        fh1 = sobolev_norm(F, 1.0)
        rhs += _trapezoid(fh1 * (np.sqrt(En) + En ** (p / (p + 1))), dt)
    if rhs <= 0:
        return CheckResult("flux", np.inf, np.inf, False, dict(reason="zero right side"))
    C2 = float(np.max(En) / rhs)
    return CheckResult("flux", C2, np.inf, bool(np.isfinite(C2)), dict(rhs=float(rhs)))


def _trapezoid(y: np.ndarray, dt: float) -> float:
    return float(dt * (np.sum(y) - 0.5 * (y[0] + y[-1])))


# ------------------------------------------------------------ observability

@lru_cache(maxsize=16)
def observability_gramian(a: SmoothProfile, K: int, T: float) -> np.ndarray:
    """int_0^T S_a(t)* A S_a(t) dt, exact via a block matrix exponential."""
    L = generator(a, K).matrix
    A = convolution_matrix(a, K)
    n = L.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    big[:n, :n] = -L.conj().T
    big[:n, n:] = A
    big[n:, n:] = L
    E = sla.expm(big * T)
    G = E[n:, n:].conj().T @ E[:n, n:]
    return 0.5 * (G + G.conj().T)


def l2_observability_ratio(a: SmoothProfile, u0, T: float = 1.0) -> np.ndarray:
    c = as_coeffs(u0)
    G = observability_gramian(a, (c.shape[-1] - 1) // 2, float(T))
    num = np.real(np.einsum("...i,ij,...j->...", np.conj(c), G, c))
    return num / np.sum(np.abs(c) ** 2, axis=-1)


def l2_observability_check(a: SmoothProfile, K: int = 64, T: float = 1.0, samples: int = 200,
                           seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    u0 = rng.normal(size=(samples, 2 * K + 1)) + 1j * rng.normal(size=(samples, 2 * K + 1))
    u0 = u0 * japanese(K) ** -rng.uniform(0.0, 2.0, size=(samples, 1))
    r = l2_observability_ratio(a, u0, T)
    exact_min = float(np.linalg.eigvalsh(observability_gramian(a, K, float(T)))[0])
    return CheckResult("l2_observability", float(r.min()), 0.0, bool(r.min() > 0),
                       dict(sample_max=float(r.max()), gramian_min=exact_min))


# -------------------------------------------------------- Duhamel smoothing

def rough_data(K: int, seed: int = 0, decay: float = 1.5) -> np.ndarray:
    """Coefficients <k>^{-decay} with random unit phases (H^1, not uniformly H^{1+sigma} for decay 3/2)."""
    rng = np.random.default_rng(seed)
    return japanese(K) ** -decay * np.exp(2j * np.pi * rng.uniform(size=2 * K + 1))


def duhamel_smoothing_check(u0, model: Model, sigma: float = 0.25, horizon: float = 5.0,
                            force=None, sample_every: int = 10) -> CheckResult:
    """sup_t ||u(t) - e^{-i theta(t)} S_a(t) u0||_{H^{1+sigma}} together with sup_t ||u(t)||_{H^{1+sigma}}."""
    if not 0 < sigma <= 0.25:
        raise ValueError("sigma must lie in (0, 1/4]")
    c0 = np.array(as_coeffs(u0), dtype=complex)
    traj = evolve(c0, horizon, model, force=force)
    theta = gauge_phase(traj)
    idx = np.arange(0, traj.n_steps + 1, sample_every)
    S = generator(model.a, traj.K).expm(sample_every * traj.dt)
    free = np.empty((len(idx), c0.size), dtype=complex)
    w = c0
    for i in range(len(idx)):
        free[i] = w
        w = S @ w
    diff = traj.fields[idx] - np.exp(-1j * theta[idx])[:, None] * free
    dn = sobolev_norm(diff, 1 + sigma)
    un = sobolev_norm(traj.fields[idx], 1 + sigma)
    return CheckResult("duhamel_smoothing", float(np.max(dn)), np.inf, bool(np.all(np.isfinite(dn))),
                       dict(u_norm_sup=float(np.max(un)), times=traj.times[idx], series=dn))


# ------------------------------------------------- high-frequency dissipation

def hf_dissipation_check(problem, v0, m_list=(8, 16, 32, 64), control=None,
                         sigma: float | None = None) -> CheckResult:
    """Slope of log ||Q_m(v(T) - z(T))||_{H^s} against log m.

    `problem` is a `control.ControlProblem` carrying the reference; `control`
    optionally adds HUM frame coefficients to the linearized run.
    """
    from .control import solve_linearized, solve_z

    m_list = sorted(int(m) for m in m_list)
    if len(m_list) < 3:
        raise ValueError("need at least three truncation levels")
    sigma = problem.sigma if sigma is None else sigma
    v = solve_linearized(problem, v0, control, store=False).fields[-1]
    z = solve_z(problem, v0).fields[-1]
    d = v - z
    norms = np.array([sobolev_norm(project(d, m, "high"), problem.s) for m in m_list])
    if not np.any(norms):
        return CheckResult("hf_dissipation", -np.inf, -sigma + 0.1, True, dict(norms=norms))
    slope = float(np.polyfit(np.log(m_list), np.log(norms), 1)[0])
    return CheckResult("hf_dissipation", slope, -sigma + 0.1, slope <= -sigma + 0.1,
                       dict(norms=norms, m=m_list))


# ------------------------------------------------------------ counterexample

def counterexample_run(a0: float, v0, T: float = 1.0, dt: float = 1e-3,
                       tol: float = 1e-3) -> CheckResult:
    """Linearized equation with the feedback potential u = sqrt(pi a0 / 2)(1+i) v/||v||, p = 3.

    Only the rank-one part of the potential is kept, (2/pi) u Re(u, v) = a0(1+i) v,
    so the flow reduces to i v_t + v_xx = a0 v and every mode keeps its magnitude.
    Stepping: exact damped half-steps around a second-order Runge-Kutta feedback stage.
    """
    c = np.array(as_coeffs(v0), dtype=complex)
    K = (c.size - 1) // 2
    k2 = wavenumbers(K).astype(float) ** 2
    half = np.exp((-1j * k2 - a0) * 0.5 * dt)
    mag0 = np.abs(c)
    live = mag0 > 1e-14 * max(mag0.max(), 1e-300)
    n = int(round(T / dt))

    def rhs(w):
        nv = np.linalg.norm(w)
        if nv < 1e-12:
            raise IntegrationError("feedback undefined: ||v|| below 1e-12", 0.0)
        ut = np.sqrt(np.pi * a0 / 2) * (1 + 1j) * w / nv
        pair = np.real(np.vdot(ut, w))
        return -1j * (2 / np.pi) * ut * pair

    drift = 0.0
    for _ in range(n):
        c = half * c
        c = c + dt * rhs(c + 0.5 * dt * rhs(c))
        c = half * c
        drift = max(drift, float(np.max(np.abs(np.abs(c[live]) - mag0[live]) / mag0[live])))
    return CheckResult("counterexample", drift, tol, drift <= tol, dict(final=c))


# ------------------------------------------------------------ energy decay

def energy_decay_fit(u0, model: Model, horizon: float = 20.0, sample_every: int = 100) -> CheckResult:
    """Unforced run; least squares of log E(t) on t gives the decay rate beta and R^2."""
    from scipy.stats import linregress

    traj = evolve(u0, horizon, model)
    E = energy(traj.fields[::sample_every], model.p)
    t = traj.times[::sample_every]
    if not np.all(E > 0):
        return CheckResult("energy_decay", np.nan, 0.0, False, dict(reason="energy vanished"))
    r = linregress(t, np.log(E))
    return CheckResult("energy_decay", float(-r.slope), 0.0, bool(-r.slope > 0),
                       dict(r2=float(r.rvalue ** 2), times=t, energy=E))
