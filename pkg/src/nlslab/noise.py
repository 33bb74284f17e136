"""Block noise: on each window [nT, (n+1)T) the force is

    eta_n(t, x) = chi(x) sum_{j,k} b_{jk} (theta_{jk1} + i theta_{jk2}) alpha_j(t) e_k(x)

with i.i.d. theta drawn from rho(x) = 35/32 (1 - x^2)^3 on [-1, 1].
Every coefficient has its own counter-based random stream keyed by
(seed, n, j, k, l), so blocks can be sampled in any order or in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import (
    SmoothProfile,
    SpectralField,
    constant_profile,
    japanese,
    multiply_profile,
    resize,
    wavenumbers,
    window_bump,
)

# ------------------------------------------------------------- time basis


def time_basis(j, T: float, t):
    """alpha_1 = 1/sqrt(T), alpha_j = sqrt(2/T) cos((j-1) pi t / T)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-12 * T) or np.any(t > T * (1 + 1e-12)):
        raise ValueError(f"time {t} outside the window [0, {T}]")
    j = np.asarray(j)
    if np.any(j < 1):
        raise ValueError("time-basis index starts at 1")
    val = np.sqrt(2.0 / T) * np.cos((j - 1) * np.pi * t / T)
    return np.where(j == 1, 1.0 / np.sqrt(T), val)


def time_basis_matrix(J: int, T: float, t) -> np.ndarray:
    """alpha_j(t_i) for j = 1..J as an array of shape (len(t), J)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return time_basis(np.arange(1, J + 1)[None, :], T, t[:, None])


# ---------------------------------------------------------------- density

def density(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1, 35.0 / 32.0 * (1 - x * x) ** 3, 0.0)


def density_logderiv(x):
    return -6.0 * x / (1.0 - x * x)


def density_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return 0.5 + 35.0 / 32.0 * (x - x ** 3 + 0.6 * x ** 5 - x ** 7 / 7.0)


_TABLE_X = np.linspace(-1.0, 1.0, (1 << 15) + 1)
_TABLE_F = density_cdf(_TABLE_X)
DENSITY_VARIANCE = 1.0 / 9.0


def inverse_cdf(u):
    return np.interp(u, _TABLE_F, _TABLE_X)


# ----------------------------------------------------------------- hashing

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)


def mix64(x):
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = x + _GOLD
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
        return x ^ (x >> np.uint64(31))


def stream_key(*parts) -> np.ndarray:
    """Fold integer parts into a 64-bit key; broadcasting over array parts."""
    h = np.uint64(0x243F6A8885A308D3)
    for part in parts:
        v = np.asarray(part).astype(np.int64).astype(np.uint64)
        h = mix64(h ^ v)
    return h


def uniforms(key) -> np.ndarray:
    """Uniform [0,1) doubles from the top 53 bits of a mixed key."""
    return (mix64(key) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def member_seed(seed: int, member: int) -> int:
    return int(stream_key(seed, member, 0x5EED))


# ------------------------------------------------------------------ spec

@dataclass(frozen=True)
class NoiseSpec:
    """Law of one noise block.  `b` has shape (J, 2*K_eta+1) over j = 1..J, k = -K_eta..K_eta."""

    b: np.ndarray
    K: int = 64
    T: float = 1.0
    chi: SmoothProfile = field(default_factory=window_bump)
    B0: float | None = None
    r_bound: float | None = None

    def __post_init__(self):
        b = np.array(self.b, dtype=float, copy=True)
        if b.ndim != 2 or b.shape[1] % 2 != 1:
            raise ValueError("amplitude table must have shape (J, 2*K_eta+1)")
        if np.any(b < 0):
            raise ValueError("amplitudes must be nonnegative")
        if (b.shape[1] - 1) // 2 > self.K:
            raise ValueError("noise cutoff K_eta exceeds field cutoff K")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        if self.B0 is not None and self.r_bound is not None:
            if strength_B(self, self.r_bound) > self.B0 * (1 + 1e-12):
                raise ValueError("amplitude table violates the declared strength bound")

    @property
    def J(self) -> int:
        return self.b.shape[0]

    @property
    def K_eta(self) -> int:
        return (self.b.shape[1] - 1) // 2

    @property
    def is_zero(self) -> bool:
        return not np.any(self.b)

    def scaled(self, factor: float) -> "NoiseSpec":
        B0 = None if self.B0 is None else self.B0 * factor ** 2
        return NoiseSpec(self.b * factor, self.K, self.T, self.chi, B0, self.r_bound)

    def nondegenerate_up_to(self, N: int) -> bool:
        if N > self.J or N > self.K_eta:
            return False
        sub = self.b[:N, self.K_eta - N:self.K_eta + N + 1]
        return bool(np.all(sub > 0))


def default_spec(K: int = 64, J: int = 24, K_eta: int = 24, B0: float = 1.0, s: float = 1.0,
                 sigma: float = 0.25, T: float = 1.0, chi: SmoothProfile | None = None) -> NoiseSpec:
    """b_{jk} = b0 <j>^-2 <k>^-(s+sigma)-1, with b0 fixed by B(s+sigma) = B0."""
    r = s + sigma
    j = np.arange(1, J + 1, dtype=float)
    shape = np.outer((1 + j * j) ** -1.0, japanese(K_eta) ** (-r - 1.0))
    raw = np.sum(shape ** 2 * japanese(K_eta)[None, :] ** (2 * r))
    b = shape * np.sqrt(B0 / raw) if B0 > 0 else np.zeros_like(shape)
    return NoiseSpec(b, K=K, T=T, chi=window_bump() if chi is None else chi, B0=B0, r_bound=r)


def zero_spec(K: int = 64, J: int = 1, K_eta: int = 0, T: float = 1.0,
              chi: SmoothProfile | None = None) -> NoiseSpec:
    return NoiseSpec(np.zeros((J, 2 * K_eta + 1)), K=K, T=T,
                     chi=window_bump() if chi is None else chi)


def strength_B(spec: NoiseSpec, r: float) -> float:
    w = japanese(spec.K_eta) ** (2.0 * r)
    return float(np.sum(spec.b ** 2 * w[None, :]))


# ----------------------------------------------------------------- blocks

def sample_theta(spec: NoiseSpec, seed, n) -> np.ndarray:
    """theta with shape seed.shape + (J, 2K_eta+1, 2); seed may be an array of member seeds."""
    seed = np.asarray(seed)
    j = np.arange(1, spec.J + 1)[:, None, None]
    k = wavenumbers(spec.K_eta)[None, :, None]
    l = np.arange(1, 3)[None, None, :]
    s = seed.reshape(seed.shape + (1, 1, 1))
    key = stream_key(s, n, j, k, l)
    return inverse_cdf(uniforms(key))


@dataclass(frozen=True)
class NoiseBlock:
    spec: NoiseSpec
    theta: np.ndarray
    n: int
    seed: int

    @property
    def stream_id(self) -> int:
        return int(stream_key(self.seed, self.n))

    def spatial_modes(self) -> np.ndarray:
        """chi * sum_k b_jk (theta1 + i theta2) e_k for each j, shape (J, 2K+1)."""
        return block_modes(self.spec, self.theta)

    def to_csv(self, path) -> None:
        lines = ["j,k,theta1,theta2"]
        for jj in range(self.spec.J):
            for kk, k in enumerate(wavenumbers(self.spec.K_eta)):
                t1, t2 = self.theta[jj, kk]
                lines.append(f"{jj + 1},{k},{float(t1)!r},{float(t2)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def block_modes(spec: NoiseSpec, theta: np.ndarray) -> np.ndarray:
    """Windowed spatial fields per time mode; theta may carry leading batch axes."""
    amp = spec.b * (theta[..., 0] + 1j * theta[..., 1])
    modes = resize(amp, spec.K)
    return multiply_profile(modes, spec.chi)


def sample_block(spec: NoiseSpec, seed: int, n: int) -> NoiseBlock:
    return NoiseBlock(spec, sample_theta(spec, seed, n), int(n), int(seed))


def evaluate_noise(block: NoiseBlock, t: float) -> SpectralField:
    T = block.spec.T
    if t < 0 or t >= T:
        raise ValueError(f"t={t} outside [0, {T}); use the next block")
    alpha = time_basis(np.arange(1, block.spec.J + 1), T, t)
    return SpectralField(alpha @ block.spatial_modes())


def force_from_modes(modes: np.ndarray, T: float, t_offset: float = 0.0):
    """Force callable t -> sum_j alpha_j(t - t_offset) modes[..., j, :]."""
    J = modes.shape[-2]
    jj = np.arange(1, J + 1)

    def force(t):
        alpha = time_basis(jj, T, min(max(t - t_offset, 0.0), T))
        return np.einsum("j,...jk->...k", alpha, modes)

    return force


def block_force(block: NoiseBlock, t_offset: float = 0.0):
    return force_from_modes(block.spatial_modes(), block.spec.T, t_offset)


def block_norm_sq(spec: NoiseSpec, theta: np.ndarray, r: float = 0.0) -> np.ndarray:
    """int_0^T ||eta||^2_{H^r} dt, exact by orthonormality of the time basis."""
    modes = block_modes(spec, theta)
    w = japanese(spec.K) ** (2 * r)
    return np.sum(np.abs(modes) ** 2 * w, axis=(-1, -2))


def unit_window() -> SmoothProfile:
    return constant_profile(1.0)
