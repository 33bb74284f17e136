"""Fourier fields on the torus [0, 2*pi), Sobolev norms, smooth profiles and
the damped linear group generated by i d_xx - a(x).

Coefficients are stored for k = -K..K against the orthonormal basis
e_k(x) = exp(ikx) / sqrt(2 pi).  Array-level helpers accept a leading batch
axis so ensembles can be pushed through the same code path as single fields.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

SQRT_2PI = float(np.sqrt(2.0 * np.pi))
SNAPSHOT_MAGIC = b"NLSF"
SNAPSHOT_VERSION = 1


def wavenumbers(K: int) -> np.ndarray:
    return np.arange(-K, K + 1)


def japanese(K: int) -> np.ndarray:
    """<k> = sqrt(1 + k^2) on the index range -K..K."""
    k = wavenumbers(K)
    return np.sqrt(1.0 + k * k)


def cutoff_of(coeffs: np.ndarray) -> int:
    n = coeffs.shape[-1]
    if n % 2 != 1:
        raise ValueError(f"coefficient axis has even length {n}; expected 2K+1")
    return (n - 1) // 2


def fast_len(n: int) -> int:
    return sfft.next_fast_len(int(n))


@dataclass(frozen=True)
class SpectralField:
    """Truncated Fourier representation of a complex field on the torus."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.ndim != 1:
            raise ValueError("SpectralField holds a single field; use raw arrays for batches")
        cutoff_of(c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return (self.coeffs.size - 1) // 2

    @classmethod
    def zeros(cls, K: int) -> "SpectralField":
        return cls(np.zeros(2 * K + 1, dtype=complex))

    @classmethod
    def mode(cls, K: int, k: int, value: complex = 1.0) -> "SpectralField":
        c = np.zeros(2 * K + 1, dtype=complex)
        c[k + K] = value
        return cls(c)

    def __getitem__(self, k: int) -> complex:
        return complex(self.coeffs[k + self.K])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _same_cutoff(self, other)
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _same_cutoff(self, other)
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs)

    def conj_physical(self) -> "SpectralField":
        """Coefficients of the complex conjugate field: conj(u)^(k) = conj(u^(-k))."""
        return SpectralField(np.conj(self.coeffs[::-1]))

    def resized(self, K: int) -> "SpectralField":
        return SpectralField(resize(self.coeffs, K))


def _same_cutoff(*fields: SpectralField) -> None:
    Ks = {f.K for f in fields}
    if len(Ks) != 1:
        raise ValueError(f"mismatched cutoffs {sorted(Ks)}")


def as_coeffs(u) -> np.ndarray:
    return u.coeffs if isinstance(u, SpectralField) else np.asarray(u, dtype=complex)


def resize(c: np.ndarray, K: int) -> np.ndarray:
    """Zero-pad or truncate the coefficient axis to cutoff K."""
    K0 = cutoff_of(c)
    out = np.zeros(c.shape[:-1] + (2 * K + 1,), dtype=complex)
    kk = min(K, K0)
    out[..., K - kk:K + kk + 1] = c[..., K0 - kk:K0 + kk + 1]
    return out


# ---------------------------------------------------------------- transforms

def coeffs_to_grid(c: np.ndarray, M: int) -> np.ndarray:
    """Samples u(x_j) = sum_k c_k e_k(x_j) at x_j = 2 pi j / M (batched)."""
    K = cutoff_of(c)
    if M < 2 * K + 1:
        raise ValueError(f"grid of {M} points aliases a cutoff-{K} field; need M >= {2 * K + 1}")
    buf = np.zeros(c.shape[:-1] + (M,), dtype=complex)
    buf[..., :K + 1] = c[..., K:]
    if K:
        buf[..., M - K:] = c[..., :K]
    return sfft.ifft(buf, axis=-1) * (M / SQRT_2PI)


def grid_to_coeffs(u: np.ndarray, K: int) -> np.ndarray:
    """Discrete Fourier coefficients in the e_k convention, truncated to K."""
    M = u.shape[-1]
    if M < 2 * K + 1:
        raise ValueError(f"grid of {M} points cannot resolve cutoff {K}")
    U = sfft.fft(u, axis=-1) * (SQRT_2PI / M)
    out = np.empty(u.shape[:-1] + (2 * K + 1,), dtype=complex)
    out[..., K:] = U[..., :K + 1]
    if K:
        out[..., :K] = U[..., M - K:]
    return out


def grid(M: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(M) / M


def to_physical(u: SpectralField, M: int) -> np.ndarray:
    return coeffs_to_grid(u.coeffs, M)


def from_physical(samples, K: int, x=None) -> SpectralField:
    samples = np.asarray(samples, dtype=complex)
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.shape != samples.shape or not np.allclose(x, grid(samples.size), atol=1e-12):
            raise ValueError("samples must sit on the uniform grid x_j = 2 pi j / M")
    return SpectralField(grid_to_coeffs(samples, K))


def product_grid_size(K: int, p: int = 3) -> int:
    """Padded grid size making degree-p products alias-free after truncation."""
    return fast_len(((p + 1) * (2 * K + 1) + 1) // 2)


# ------------------------------------------------------------------ norms

def sobolev_norm(u, s: float) -> float | np.ndarray:
    c = as_coeffs(u)
    w = japanese(cutoff_of(c)) ** (2.0 * s)
    return np.sqrt(np.sum(w * np.abs(c) ** 2, axis=-1))


def l2_inner(u, v) -> complex | np.ndarray:
    """(u, v) = integral of u * conj(v)."""
    return np.sum(as_coeffs(u) * np.conj(as_coeffs(v)), axis=-1)


def real_inner(u, v) -> float | np.ndarray:
    return np.real(l2_inner(u, v))


def project(u, m: int, part: str = "low"):
    c = as_coeffs(u)
    K = cutoff_of(c)
    if not 0 <= m <= K:
        raise ValueError(f"projection level m={m} outside 0..{K}")
    mask = np.abs(wavenumbers(K)) <= m
    if part == "high":
        mask = ~mask
    elif part != "low":
        raise ValueError("part must be 'low' or 'high'")
    out = np.where(mask, c, 0.0)
    return SpectralField(out) if isinstance(u, SpectralField) else out


def bessel_power(u, r: float):
    """Multiply u^(k) by (1 + k^2)^r, i.e. apply (1 - d_xx)^r."""
    c = as_coeffs(u)
    out = c * (1.0 + wavenumbers(cutoff_of(c)).astype(float) ** 2) ** r
    return SpectralField(out) if isinstance(u, SpectralField) else out


# --------------------------------------------------------------- profiles

def _smooth_step(y: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for y <= 0, 1 for y >= 1."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        g = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
        out = f / (f + g)
    return np.where(y <= 0, 0.0, np.where(y >= 1, 1.0, out))


def circular_distance(x: np.ndarray, center: float) -> np.ndarray:
    d = np.mod(np.asarray(x, dtype=float) - center, 2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


PROFILE_TAIL_TOL = 1e-15


@dataclass(frozen=True)
class SmoothProfile:
    """Nonnegative smooth function on the torus with cached Fourier coefficients.

    kind "bump": height on the arc |x - center| <= half_width, falling to 0
    across a transition of the given width through an exp(-1/y) mollifier.
    kind "constant": the value `height` everywhere.
    kind "samples": values given on a uniform grid (band-limited interpolation).
    """

    kind: str = "bump"
    center: float = np.pi / 4
    half_width: float = np.pi / 4
    width: float = 1.0
    height: float = 1.0
    samples: tuple | None = None
    K_prof: int | None = None
    coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("bump", "constant", "samples"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == "bump":
            if self.width <= 0 or self.half_width < 0:
                raise ValueError("bump needs positive transition width and nonnegative plateau")
            if self.half_width + self.width > np.pi:
                raise ValueError("bump support wraps around the torus")
        if self.height < 0:
            raise ValueError("profiles must be nonnegative")
        object.__setattr__(self, "coeffs", self._build_coeffs())

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, float(self.height))
        if self.kind == "bump":
            d = circular_distance(x, self.center)
            return self.height * _smooth_step((self.half_width + self.width - d) / self.width)
        return np.real(_eval_series(self.coeffs, x))

    def _build_coeffs(self) -> np.ndarray:
        if self.kind == "constant":
            c = np.zeros(1, dtype=complex)
            c[0] = self.height * SQRT_2PI
            return _readonly(c)
        if self.kind == "samples":
            vals = np.asarray(self.samples, dtype=float)
            if np.any(vals < 0):
                raise ValueError("profiles must be nonnegative")
            M = vals.size
            K = (M - 1) // 2 if self.K_prof is None else min(self.K_prof, (M - 1) // 2)
            c = grid_to_coeffs(vals.astype(complex), K)
            return _readonly(_hermitian(c))
        # bump: sample finely, then trim the tail below tolerance
        M = 1 << 14
        c = grid_to_coeffs(self.values(grid(M)).astype(complex), M // 2 - 1)
        c = _hermitian(c)
        if self.K_prof is not None:
            return _readonly(resize(c, self.K_prof))
        mag = np.abs(c)
        Kfull = cutoff_of(c)
        scale = max(mag.max(), 1e-300)
        k = wavenumbers(Kfull)
        big = np.abs(k[mag > PROFILE_TAIL_TOL * scale])
        return _readonly(resize(c, int(big.max()) if big.size else 0))

    @property
    def cutoff(self) -> int:
        return cutoff_of(self.coeffs)

    def derivative_coeffs(self, order: int = 1) -> np.ndarray:
        k = wavenumbers(self.cutoff)
        return self.coeffs * (1j * k) ** order

    def grid_values(self, M: int) -> np.ndarray:
        """Band-limited profile sampled on an M-point grid (real part)."""
        c = self.coeffs if 2 * self.cutoff + 1 <= M else resize(self.coeffs, (M - 1) // 2)
        return np.real(coeffs_to_grid(c, M))

    @property
    def mean(self) -> float:
        return float(np.real(self.coeffs[self.cutoff]) / SQRT_2PI)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


def _readonly(c: np.ndarray) -> np.ndarray:
    c = np.ascontiguousarray(c)
    c.setflags(write=False)
    return c


def _hermitian(c: np.ndarray) -> np.ndarray:
    """Symmetrize so the represented function is exactly real."""
    return 0.5 * (c + np.conj(c[::-1]))


def _eval_series(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    k = wavenumbers(cutoff_of(c))
    return np.exp(1j * np.multiply.outer(x, k)) @ c / SQRT_2PI


def damping_bump(a0: float = 1.0, center: float = np.pi / 4, half_width: float = np.pi / 4,
                 width: float = 1.0) -> SmoothProfile:
    return SmoothProfile("bump", center=center, half_width=half_width, width=width, height=a0)


def window_bump(chi0: float = 1.0, center: float = 5 * np.pi / 4, half_width: float = np.pi / 4,
                width: float = 1.0) -> SmoothProfile:
    return SmoothProfile("bump", center=center, half_width=half_width, width=width, height=chi0)


def constant_profile(value: float) -> SmoothProfile:
    return SmoothProfile("constant", height=value)


def convolution_matrix(profile: SmoothProfile, K: int) -> np.ndarray:
    """Matrix of u -> P_K(profile * u) on the cutoff-K space: (2pi)^(-1/2) a^(k - k')."""
    k = wavenumbers(K)
    diff = np.subtract.outer(k, k)
    Kp = profile.cutoff
    full = np.zeros(4 * K + 1, dtype=complex)
    kk = min(Kp, 2 * K)
    full[2 * K - kk:2 * K + kk + 1] = profile.coeffs[Kp - kk:Kp + kk + 1]
    return full[diff + 2 * K] / SQRT_2PI


def multiply_profile(u, profile: SmoothProfile):
    """Coefficients of profile(x) * u(x) truncated to the cutoff of u.

    The product is formed on a padded grid large enough that the band-limited
    profile times the field is alias-free on |k| <= K.
    """
    c = as_coeffs(u)
    if profile.is_constant:
        out = c * profile.height
    else:
        K = cutoff_of(c)
        M = fast_len(2 * K + profile.cutoff + 1)
        vals = profile.grid_values(M)
        out = grid_to_coeffs(coeffs_to_grid(c, M) * vals, K)
    return SpectralField(out) if isinstance(u, SpectralField) else out


# -------------------------------------------------------- damped generator

class DampedGenerator:
    """Dense matrix of i d_xx - a(x) on the cutoff-K space, with cached exponentials."""

    def __init__(self, a: SmoothProfile, K: int):
        self.a = a
        self.K = int(K)
        k = wavenumbers(self.K).astype(float)
        self.matrix = np.diag(-1j * k * k) - convolution_matrix(a, self.K)
        self._expm_cache: dict[float, np.ndarray] = {}
        self._inv_cache: dict[float, np.ndarray] = {}

    @property
    def damping_matrix(self) -> np.ndarray:
        return convolution_matrix(self.a, self.K)

    def expm(self, t: float) -> np.ndarray:
        t = float(t)
        if t < 0 and not (self.a.is_constant and self.a.height == 0):
            raise ValueError("backward damped flow is ill-posed; negative t only for a = 0")
        if t not in self._expm_cache:
            if self.a.is_constant:
                k = wavenumbers(self.K).astype(float)
                E = np.diag(np.exp((-1j * k * k - self.a.height) * t))
            else:
                E = sla.expm(self.matrix * t)
            if len(self._expm_cache) > 16:
                self._expm_cache.clear()
            self._expm_cache[t] = E
        return self._expm_cache[t]

    def inverse_expm(self, t: float) -> np.ndarray:
        """exp(-L t) for t >= 0; used only to invert single discrete steps."""
        t = float(t)
        if t not in self._inv_cache:
            self._inv_cache[t] = sla.expm(-self.matrix * t)
        return self._inv_cache[t]

    def apply(self, c: np.ndarray, t: float) -> np.ndarray:
        return c @ self.expm(t).T

    @cached_property
    def symmetric_part_max(self) -> float:
        H = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.max(np.linalg.eigvalsh(H)))


_GENERATORS: dict = {}


def generator(a: SmoothProfile, K: int) -> DampedGenerator:
    key = (id(a), K)
    gen = _GENERATORS.get(key)
    if gen is None or gen.a is not a:
        if len(_GENERATORS) > 32:
            _GENERATORS.clear()
        gen = DampedGenerator(a, K)
        _GENERATORS[key] = gen
    return gen


def propagate_damped(u, t: float, a: SmoothProfile, method: str = "matrix-exponential",
                     dt: float | None = None):
    """S_a(t) u.  The split-step path uses exact dispersion and the pointwise
    damping factor exp(-a(x) dt) in Strang order; it converges at order dt^2."""
    c = as_coeffs(u)
    K = cutoff_of(c)
    if t < 0 and not (a.is_constant and a.height == 0):
        raise ValueError("backward damped flow is ill-posed; negative t only for a = 0")
    if method == "matrix-exponential":
        out = generator(a, K).apply(c, t)
    elif method == "split-steps":
        if dt is None or dt <= 0:
            raise ValueError("split-steps needs a positive dt")
        n = max(1, int(round(abs(t) / dt)))
        h = t / n
        k = wavenumbers(K).astype(float)
        half = np.exp(-0.5j * k * k * h)
        M = fast_len(2 * K + a.cutoff + 1)
        damp = np.exp(-a.grid_values(M) * h)
        out = c * half
        for i in range(n):
            out = grid_to_coeffs(coeffs_to_grid(out, M) * damp, K)
            out = out * (half if i == n - 1 else half * half)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectralField(out) if isinstance(u, SpectralField) else out


# ------------------------------------------------------------ snapshot io

def write_snapshot(path, u: SpectralField) -> None:
    header = SNAPSHOT_MAGIC + struct.pack("<HH", SNAPSHOT_VERSION, u.K) + bytes(8)
    body = np.empty(2 * u.coeffs.size, dtype="<f8")
    body[0::2] = u.coeffs.real
    body[1::2] = u.coeffs.imag
    Path(path).write_bytes(header + body.tobytes())


def read_snapshot(path) -> SpectralField:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a field snapshot (bad magic)")
    version, K = struct.unpack("<HH", raw[4:8])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    expected = 16 + 16 * (2 * K + 1)
    if len(raw) != expected:
        raise ValueError(f"{path}: corrupt snapshot, {len(raw)} bytes where {expected} expected")
    body = np.frombuffer(raw[16:], dtype="<f8")
    return SpectralField(body[0::2] + 1j * body[1::2])


def write_csv(path, u: SpectralField) -> None:
    lines = ["k,re,im"]
    for k, c in zip(wavenumbers(u.K), u.coeffs):
        lines.append(f"{k},{float(c.real)!r},{float(c.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> SpectralField:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ks = rows[:, 0].astype(int)
    K = int(np.max(np.abs(ks)))
    c = np.zeros(2 * K + 1, dtype=complex)
    c[ks + K] = rows[:, 1] + 1j * rows[:, 2]
    return SpectralField(c)
