"""Strang self-convergence and energy-identity residual orders across cutoffs.

    python scripts/convergence_study.py

Ratios near 4 need K^2 dt <= 2; larger products are still pre-asymptotic.
"""
import numpy as np

from nlslab.dynamics import Model, energy_identity_residuals, evolve
from nlslab.spectral import japanese, multiply_profile, wavenumbers, window_bump


def main():
    rng = np.random.default_rng(1)
    dts = [2e-3, 1e-3, 5e-4, 2.5e-4]
    print("K   dt-halving ratios of successive differences")
    for K in (16, 32, 64):
        c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * japanese(K) ** -2.6
        f = [evolve(c, 1.0, Model(K=K, dt=dt), store=False).fields[-1] for dt in dts]
        e = [np.linalg.norm(f[i] - f[i + 1]) for i in range(len(f) - 1)]
        print(f"{K:<3d} " + "  ".join(f"{e[i] / e[i + 1]:.3f}" for i in range(len(e) - 1)))
    K = 32
    k = wavenumbers(K)
    c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * japanese(K) ** -3.0
    base = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * np.exp(-np.abs(k))
    force = lambda t: multiply_profile(base * np.cos(3 * t), window_bump())
    print("dt        mass residual   energy residual")
    for dt in dts:
        r = energy_identity_residuals(evolve(c, 1.0, Model(K=K, dt=dt), force=force), force)
        print(f"{dt:<9.2e} {r['mass_l2']:.3e}       {r['energy_l2']:.3e}")


if __name__ == "__main__":
    main()
