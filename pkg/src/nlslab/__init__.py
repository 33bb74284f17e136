"""Numerical laboratory for the randomly forced, damped nonlinear Schroedinger
equation on the circle: spectral integrator, structured noise, controllability
of the linearization, equivalent norms, diagnostics and mixing experiments."""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, load_defaults
from .dynamics import Model, Trajectory, evolve
from .noise import NoiseSpec, default_spec, zero_spec
from .spectral import SpectralField, SmoothProfile, damping_bump, window_bump

__all__ = [
    "ExperimentConfig", "load_config", "load_defaults", "Model", "Trajectory", "evolve",
    "NoiseSpec", "default_spec", "zero_spec", "SpectralField", "SmoothProfile",
    "damping_bump", "window_bump", "__version__",
]
