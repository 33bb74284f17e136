"""Equivalent norms in which the damped group contracts, operator-norm
estimates, the spectral abscissa, a windowed X^{s,b} estimator and a
product-estimate sampler.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .spectral import (
    SmoothProfile,
    as_coeffs,
    coeffs_to_grid,
    cutoff_of,
    generator,
    grid_to_coeffs,
    japanese,
    sobolev_norm,
    wavenumbers,
)


def spectral_abscissa(a: SmoothProfile, K: int) -> float:
    L = generator(a, K).matrix
    try:
        ev = np.linalg.eigvals(L)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    return float(np.max(ev.real))


@lru_cache(maxsize=16)
def _eig(a: SmoothProfile, K: int):
    L = generator(a, K).matrix
    lam, V = np.linalg.eig(L)
    return lam, V, np.linalg.inv(V)


def ladder_threshold(a: SmoothProfile, K: int) -> float:
    """Largest deviation of ||L_a e_k|| from k^2 over the basis; below this
    scale the ladder is dominated by the damping rather than by dispersion."""
    L = generator(a, K).matrix
    k = wavenumbers(K).astype(float)
    return float(np.max(np.abs(np.linalg.norm(L, axis=0) - k * k)))


@dataclass(frozen=True)
class EquivalentNormSpec:
    """H~^s: a ladder of powers of L_a for even s, the damped sup construction otherwise."""

    s: float
    a: SmoothProfile
    K: int
    A: float | None = None
    beta: float | None = None
    T_max: float | None = None
    step: float = 0.01

    @property
    def is_ladder(self) -> bool:
        return float(self.s).is_integer() and int(self.s) % 2 == 0

    @property
    def ladder_A(self) -> float:
        if self.A is not None:
            return float(self.A)
        return 10.0 * max(ladder_threshold(self.a, self.K), 1.0)

    @property
    def decay(self) -> float:
        if self.beta is not None:
            return float(self.beta)
        return 0.5 * abs(spectral_abscissa(self.a, self.K))

    @property
    def horizon(self) -> float:
        if self.T_max is not None:
            return float(self.T_max)
        ab = abs(spectral_abscissa(self.a, self.K))
        if ab == 0:
            raise ValueError("sup construction needs a strictly damped group")
        return 20.0 / ab


def _ladder_stack(spec: EquivalentNormSpec) -> list[np.ndarray]:
    n = int(spec.s) // 2
    L = generator(spec.a, spec.K).matrix
    A = spec.ladder_A
    mats, P = [], np.eye(2 * spec.K + 1, dtype=complex)
    for k in range(n + 1):
        mats.append(A ** (n - k) * P)
        P = L @ P
    return mats


def _sup_times(spec: EquivalentNormSpec) -> np.ndarray:
    n = int(np.ceil(spec.horizon / spec.step))
    return spec.step * np.arange(n + 1)


def _flow_samples(c: np.ndarray, spec: EquivalentNormSpec, times: np.ndarray) -> np.ndarray:
    """S_a(t) c for every t in `times`, via the eigendecomposition of L_a."""
    lam, V, Vi = _eig(spec.a, spec.K)
    w = c @ Vi.T
    ph = np.exp(np.multiply.outer(times, lam))
    return (w[..., None, :] * ph) @ V.T


def h_tilde_norm(u, spec: EquivalentNormSpec):
    c = as_coeffs(u)
    if spec.is_ladder:
        return sum(np.linalg.norm(c @ m.T, axis=-1) for m in _ladder_stack(spec))
    if spec.a.is_constant:
        # the flow commutes with <k>: the sup is a closed form in t
        beta, a0 = spec.decay, spec.a.height
        t = _sup_times(spec)
        g = np.exp((beta - a0) * t)
        return np.max(g) * sobolev_norm(c, spec.s)
    t = _sup_times(spec)
    flows = _flow_samples(c, spec, t)
    norms = sobolev_norm(flows, spec.s)
    return np.max(np.exp(spec.decay * t) * norms, axis=-1)


def ladder_gram(spec: EquivalentNormSpec) -> np.ndarray:
    """Gram matrix of the Hilbertian ladder (sum of squares instead of sum)."""
    return sum(m.conj().T @ m for m in _ladder_stack(spec))


def contraction_factor(T: float, spec: EquivalentNormSpec, tol: float = 1e-13,
                       max_iter: int = 10_000, method: str = "power") -> float:
    """Operator norm of S_a(T) on the truncated space in H~^s.

    Even s: the ladder is measured in its Hilbertian form, whose Gram matrix G
    gives the norm of G^(1/2) S G^(-1/2); power iteration by default, dense SVD
    with method="svd".  Other s: sampled lower estimate over the basis and random
    directions, which never exceeds exp(-beta T) by construction of the norm.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    K = spec.K
    S = generator(spec.a, K).expm(T)
    if spec.is_ladder:
        G = ladder_gram(spec)
        R = sla.sqrtm(G)
        B = R @ S @ np.linalg.inv(R)
        if method == "svd":
            return float(np.linalg.svd(B, compute_uv=False)[0])
        return _power_norm(B, tol, max_iter)
    if spec.a.is_constant:
        return float(np.exp(-spec.a.height * T))
    rng = np.random.default_rng(0)
    n = 2 * K + 1
    trial = np.vstack([np.eye(n), rng.normal(size=(64, n)) + 1j * rng.normal(size=(64, n))])
    num = h_tilde_norm(trial @ S.T, spec)
    den = h_tilde_norm(trial, spec)
    return float(np.max(num / den))


def _power_norm(B: np.ndarray, tol: float, max_iter: int) -> float:
    C = B.conj().T @ B
    x = np.ones(B.shape[1], dtype=complex) / np.sqrt(B.shape[1])
    x = x + 1e-3 * np.arange(B.shape[1])
    x /= np.linalg.norm(x)
    lam = 0.0
    for it in range(max_iter):
        y = C @ x
        lam_new = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return float(np.sqrt(lam_new))
        lam = lam_new
    resid = np.linalg.norm(C @ x - lam * x)
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps (residual {resid:.3e})")


def semigroup_decay_fit(a: SmoothProfile, K: int, s: float = 0.0, t_max: float = 10.0,
                        n_t: int = 101) -> float:
    """Slope of log ||S_a(t)|| in H^s against t, least squares over [t_max/2, t_max]."""
    t = np.linspace(0.0, t_max, n_t)
    gen = generator(a, K)
    w = japanese(K) ** s
    norms = []
    for tt in t:
        S = gen.expm(tt)
        norms.append(np.linalg.norm((w[:, None] * S) / w[None, :], 2))
    sel = t >= t_max / 2
    return float(np.polyfit(t[sel], np.log(norms)[sel], 1)[0])


# --------------------------------------------------------------- X^{s,b}

def time_window(n: int, flat: float = 0.8) -> np.ndarray:
    """Smooth bump on n samples, equal to 1 on the middle `flat` fraction."""
    from .spectral import _smooth_step

    x = np.linspace(0.0, 1.0, n)
    ramp = 0.5 * (1.0 - flat)
    if ramp <= 0:
        return np.ones(n)
    up = _smooth_step(x / ramp)
    down = _smooth_step((1.0 - x) / ramp)
    return up * down


def xsb_norm_estimate(traj, s: float, b: float, window: np.ndarray | None = None,
                      pad: int = 4) -> float:
    """(sum_k int <k>^2s <tau + k^2>^2b |F(window u)(tau, k)|^2 dtau / 2pi)^(1/2).

    One fixed extension (the window) is used, so this bounds the restriction
    norm from above rather than computing the infimum.
    """
    U = np.asarray(traj.fields if hasattr(traj, "fields") else traj, dtype=complex)
    dt = traj.dt
    n = U.shape[0]
    K = cutoff_of(U)
    w = time_window(n) if window is None else np.asarray(window)
    L = pad * n
    F = np.fft.fft(w[:, None] * U, n=L, axis=0) * dt
    tau = 2 * np.pi * np.fft.fftfreq(L, d=dt)
    k = wavenumbers(K).astype(float)
    if K * K >= np.pi / dt and b != 0:
        warnings.warn(f"time grid Nyquist {np.pi / dt:.3g} below K^2 = {K * K}; "
                      "modulation weights alias", RuntimeWarning, stacklevel=2)
    weight = (1 + k * k)[None, :] ** s * (1 + (tau[:, None] + k * k) ** 2) ** b
    dtau = 2 * np.pi / (L * dt)
    return float(np.sqrt(np.sum(weight * np.abs(F) ** 2) * dtau / (2 * np.pi)))


# --------------------------------------------------------- product bound

def kato_ponce_ratio(f, g, s: float) -> float:
    """||fg||_{H^s} / (||f||_{H^1}||g||_{H^s} + ||f||_{H^s}||g||_{H^1}); product taken exactly."""
    cf, cg = as_coeffs(f), as_coeffs(g)
    K = cutoff_of(cf)
    M = 4 * K + 2
    prod = grid_to_coeffs(coeffs_to_grid(cf, M) * coeffs_to_grid(cg, M), 2 * K)
    num = sobolev_norm(prod, s)
    den = sobolev_norm(cf, 1) * sobolev_norm(cg, s) + sobolev_norm(cf, s) * sobolev_norm(cg, 1)
    return float(num / den) if den > 0 else 0.0


def kato_ponce_check(K: int, s: float, n_pairs: int = 1000, seed: int = 0) -> float:
    """Largest ratio over random pairs with algebraically decaying random coefficients."""
    rng = np.random.default_rng(seed)
    jk = japanese(K)
    worst = 0.0
    for _ in range(n_pairs):
        r1, r2 = rng.uniform(0.6, 3.0, size=2)
        f = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * jk ** (-r1 - 0.5)
        g = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * jk ** (-r2 - 0.5)
        worst = max(worst, kato_ponce_ratio(f, g, s))
    return worst
