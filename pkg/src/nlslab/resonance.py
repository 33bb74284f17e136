"""The p-linear product T(u_1..u_p) = prod_{odd l} u_l prod_{even l} conj(u_l),
its single-resonance part T_R, the remainder T_N = T - T_R, the gauge phase
and the decomposition of the linearized potential.

In Fourier variables T has weight c_p = (2 pi)^(-(p-1)/2) on every
configuration k = k_1 - k_2 + ... + k_p.  T_R keeps, for each odd slot m, the
configurations with k_m = k; a configuration resonant in two odd slots is
therefore counted twice, which is why T_N carries weight -1 there.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .spectral import (
    SpectralField,
    as_coeffs,
    coeffs_to_grid,
    cutoff_of,
    grid_to_coeffs,
    product_grid_size,
    wavenumbers,
)


def _check_inputs(inputs) -> tuple[list[np.ndarray], int, int]:
    cs = [as_coeffs(u) for u in inputs]
    p = len(cs)
    if p < 3 or p % 2 == 0:
        raise ValueError(f"need an odd number >= 3 of inputs, got {p}")
    Ks = {cutoff_of(c) for c in cs}
    if len(Ks) != 1:
        raise ValueError(f"mismatched cutoffs {sorted(Ks)}")
    return cs, p, Ks.pop()


def _wrap(inputs, out):
    return SpectralField(out) if isinstance(inputs[0], SpectralField) else out


def _slot_grids(cs: list[np.ndarray], M: int) -> list[np.ndarray]:
    """Physical samples of each slot with its conjugation applied."""
    out = []
    for l, c in enumerate(cs, start=1):
        g = coeffs_to_grid(c, M)
        out.append(g if l % 2 == 1 else np.conj(g))
    return out


def apply_T(inputs):
    cs, p, K = _check_inputs(inputs)
    M = product_grid_size(K, p)
    g = _slot_grids(cs, M)
    prod = g[0]
    for h in g[1:]:
        prod = prod * h
    return _wrap(inputs, grid_to_coeffs(prod, K))


def apply_TR(inputs):
    """sum over odd m of u_m^(k) * (1/2pi) * integral of the other p-1 slots."""
    cs, p, K = _check_inputs(inputs)
    M = product_grid_size(K, p)
    g = _slot_grids(cs, M)
    out = np.zeros_like(cs[0])
    for m in range(0, p, 2):
        rest = np.ones_like(g[0])
        for l in range(p):
            if l != m:
                rest = rest * g[l]
        mean = np.sum(rest, axis=-1) * (2 * np.pi / M)
        out = out + cs[m] * (mean[..., None] / (2 * np.pi))
    return _wrap(inputs, out)


def apply_TN(inputs):
    T = as_coeffs(apply_T(inputs))
    R = as_coeffs(apply_TR(inputs))
    return _wrap(inputs, T - R)


# ---------------------------------------------------- brute-force oracles

def brute_T(inputs, resonant_only: bool = False) -> np.ndarray:
    """Constrained Fourier sum by enumeration; cost (2K+1)^p.  Test oracle only."""
    cs, p, K = _check_inputs(inputs)
    ks = wavenumbers(K)
    cp = (2 * np.pi) ** (-(p - 1) / 2)
    out = np.zeros(2 * K + 1, dtype=complex)
    for combo in itertools.product(range(2 * K + 1), repeat=p):
        kk = ks[list(combo)]
        signs = np.array([1 if l % 2 == 0 else -1 for l in range(p)])
        k = int(np.sum(signs * kk))
        if abs(k) > K:
            continue
        val = cp
        for l, idx in enumerate(combo):
            c = cs[l][idx]
            val = val * (c if l % 2 == 0 else np.conj(c))
        if resonant_only:
            mult = sum(1 for m in range(0, p, 2) if kk[m] == k)
            val = val * mult
        out[k + K] += val
    return out


# ---------------------------------------------------------------- gauge

def lp_power_integral(c: np.ndarray, q: int) -> np.ndarray:
    """Integral of |u|^q (q even), exact on the truncated space."""
    K = cutoff_of(c)
    M = product_grid_size(K, q - 1)
    g = coeffs_to_grid(c, M)
    return np.sum((g.real ** 2 + g.imag ** 2) ** (q // 2), axis=-1) * (2 * np.pi / M)


def gauge_rate(c: np.ndarray, p: int) -> np.ndarray:
    """(p+1)/(4 pi) ||u||_{L^{p-1}}^{p-1}."""
    return (p + 1) / (4 * np.pi) * lp_power_integral(c, p - 1)


def gauge_phase(traj, p: int | None = None) -> np.ndarray:
    """theta(t) = (p+1)/(4 pi) int_0^t ||u||^(p-1)_{L^(p-1)} ds on the trajectory grid."""
    p = traj.model.p if p is None else p
    rate = gauge_rate(traj.fields, p)
    return cumulative_trapezoid(rate, dx=traj.dt, initial=0.0)


# ------------------------------------------------- potential decomposition

def potential_full(u_ref, v, p: int = 3):
    """(p+1)/2 |u|^(p-1) v + (p-1)/2 |u|^(p-3) u^2 conj(v), formed pointwise."""
    cu, cv = as_coeffs(u_ref), as_coeffs(v)
    K = cutoff_of(cu)
    M = product_grid_size(K, p)
    gu, gv = coeffs_to_grid(cu, M), coeffs_to_grid(cv, M)
    mod2 = gu.real ** 2 + gu.imag ** 2
    val = 0.5 * (p + 1) * mod2 ** ((p - 1) // 2) * gv + 0.5 * (p - 1) * mod2 ** ((p - 3) // 2) * gu ** 2 * np.conj(gv)
    out = grid_to_coeffs(val, K)
    return SpectralField(out) if isinstance(u_ref, SpectralField) else out


def potential_split(u_ref, v, p: int = 3) -> dict:
    """Gauge term, rank-one term and smoothing remainder R(u, v); they sum to the full potential."""
    cu, cv = as_coeffs(u_ref), as_coeffs(v)
    K = cutoff_of(cu)
    gauge = gauge_rate(cu, p)[..., None] * cv
    M = product_grid_size(K, p)
    gu, gv = coeffs_to_grid(cu, M), coeffs_to_grid(cv, M)
    mod2 = gu.real ** 2 + gu.imag ** 2
    pair = np.real(np.sum(mod2 ** ((p - 3) // 2) * gu * np.conj(gv), axis=-1)) * (2 * np.pi / M)
    rank_one = (p * p - 1) / (4 * np.pi) * pair[..., None] * cu
    slots_a = [cv] + [cu] * (p - 1)
    slots_b = [cu, cv] + [cu] * (p - 2)
    remainder = 0.5 * (p + 1) * apply_TN(slots_a) + 0.5 * (p - 1) * apply_TN(slots_b)
    out = dict(gauge=gauge, rank_one=rank_one, remainder=remainder)
    if isinstance(u_ref, SpectralField):
        out = {k: SpectralField(v_) for k, v_ in out.items()}
    return out
