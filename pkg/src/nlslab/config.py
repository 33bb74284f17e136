"""Experiment configuration: dataclass schema, YAML loading with unknown-key
rejection, and a stable configuration hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .dynamics import Model
from .noise import NoiseSpec, default_spec, zero_spec
from .spectral import SmoothProfile, constant_profile, damping_bump, window_bump

SCHEMA_VERSION = 1
KINDS = ("simulate", "stabilize", "control", "mixing", "coupling", "observability",
         "carleman", "smoothing", "norms")


class ConfigError(ValueError):
    pass


@dataclass
class ProfileConfig:
    kind: str = "bump"
    height: float = 1.0
    center: float | None = None
    half_width: float = float(np.pi / 4)
    width: float = 1.0

    def build(self, role: str) -> SmoothProfile:
        if self.kind == "constant":
            return constant_profile(self.height)
        if self.kind == "zero":
            return constant_profile(0.0)
        if self.kind != "bump":
            raise ConfigError(f"unknown profile kind {self.kind!r}")
        if role == "a":
            c = np.pi / 4 if self.center is None else self.center
            return damping_bump(self.height, c, self.half_width, self.width)
        c = 5 * np.pi / 4 if self.center is None else self.center
        return window_bump(self.height, c, self.half_width, self.width)


@dataclass
class ModelConfig:
    K: int = 64
    p: int = 3
    T: float = 1.0
    dt: float = 1e-3
    nonlinear: bool = True
    a: ProfileConfig = field(default_factory=ProfileConfig)
    chi: ProfileConfig = field(default_factory=ProfileConfig)

    def build(self) -> Model:
        return Model(K=self.K, p=self.p, dt=self.dt, a=self.a.build("a"), nonlinear=self.nonlinear)


@dataclass
class NoiseConfig:
    enabled: bool = True
    J: int = 24
    K_eta: int = 24
    B0: float = 1.0
    r_offset: float = 0.25

    def build(self, model: ModelConfig, s: float) -> NoiseSpec:
        chi = model.chi.build("chi")
        if not self.enabled or self.B0 == 0:
            return zero_spec(K=model.K, T=model.T, chi=chi)
        return default_spec(K=model.K, J=self.J, K_eta=self.K_eta, B0=self.B0, s=s,
                            sigma=self.r_offset, T=model.T, chi=chi)


@dataclass
class ControlConfig:
    s: float = 1.0
    sigma: float = 0.25
    sigma_prime: float = 0.25
    m: int = 8
    N: int = 24
    q: float = 0.9
    d: float = 0.1
    terminal_tol: float = 1e-7
    cg_tol: float = 1e-10


@dataclass
class RunConfig:
    seed: int = 0
    members: int = 512
    epochs: int = 40
    trials: int = 50
    horizon: float = 5.0
    separations: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    K_sweep: list = field(default_factory=lambda: [32, 64, 128])
    initial: str = "modes"
    amplitude: float = 0.5
    output: str = "runs/out"

    def __post_init__(self):
        if self.initial not in ("zero", "modes", "rough"):
            raise ConfigError(f"unknown initial data {self.initial!r}")


@dataclass
class ExperimentConfig:
    kind: str = "simulate"
    schema_version: int = SCHEMA_VERSION
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema_version}")
        if self.model.K < 1 or self.model.dt <= 0 or self.model.T <= 0:
            raise ConfigError("K, dt and T must be positive")
        if self.control.N < self.control.m:
            raise ConfigError("control truncation N must be >= m")
        if self.control.N > self.model.K:
            raise ConfigError("control truncation N must be <= K")
        if self.noise.enabled:
            Ks = [self.model.K] + (list(self.run.K_sweep) if self.kind == "smoothing" else [])
            if self.noise.K_eta > min(Ks):
                raise ConfigError(f"noise cutoff K_eta={self.noise.K_eta} exceeds field cutoff {min(Ks)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=int(seed)))


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kw = {}
    for name, value in data.items():
        f = known[name]
        sub = _NESTED.get((cls, name))
        where = f"{path}.{name}" if path else name
        kw[name] = _build(sub, value, where) if sub else _coerce(f, value, where)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _coerce(f: dataclasses.Field, value, where: str):
    default = f.default if f.default is not dataclasses.MISSING else None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, float) and not isinstance(value, bool):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


_NESTED = {
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "noise"): NoiseConfig,
    (ExperimentConfig, "control"): ControlConfig,
    (ExperimentConfig, "run"): RunConfig,
    (ModelConfig, "a"): ProfileConfig,
    (ModelConfig, "chi"): ProfileConfig,
}


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    return from_dict(data)


def defaults_text() -> str:
    return resources.files("nlslab").joinpath("defaults.yaml").read_text()


def load_defaults() -> ExperimentConfig:
    return from_dict(yaml.safe_load(defaults_text()))
