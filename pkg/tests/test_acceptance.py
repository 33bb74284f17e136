"""Acceptance suite: thirteen criteria at their stated tolerances.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal
summary.  Experiment-backed criteria run the shipped configs in configs/.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import linregress

from conftest import random_field, record
from nlslab.config import load_config
from nlslab.dynamics import Model, energy, energy_identity_residuals, evolve
from nlslab.experiment import run_experiment
from nlslab.norms import spectral_abscissa
from nlslab.resonance import apply_T, apply_TN, apply_TR, brute_T, gauge_rate, potential_full, potential_split
from nlslab.spectral import (
    coeffs_to_grid,
    constant_profile,
    damping_bump,
    grid_to_coeffs,
    multiply_profile,
    resize,
    wavenumbers,
    window_bump,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
_RUNS = {}


def run_config(name, tmp_path_factory):
    """Run a shipped config once per session; returns (manifest, output dir, seconds)."""
    if name not in _RUNS:
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        m = run_experiment(load_config(CONFIGS / f"{name}.yaml"), out)
        _RUNS[name] = (m, out, time.perf_counter() - t0)
    return _RUNS[name]


def checks_of(manifest):
    return {c.name: c for c in manifest.checks}


def fmt(x):
    return f"{x:.4g}"


# ---------------------------------------------------------------- 1

def test_criterion_01_integrator_order():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    K = 32
    c = random_field(rng, K, 2.6)  # coefficients <k>^-2.6: H^2 data
    # K^2 dt <= 2 keeps the sweep asymptotic; at K^2 dt ~ 4 the splitting error is not yet O(dt^2)
    dts = [2e-3, 1e-3, 5e-4, 2.5e-4]
    finals = [evolve(c, 1.0, Model(K=K, dt=dt), store=False).fields[-1] for dt in dts]
    e = [np.linalg.norm(finals[i] - finals[i + 1]) for i in range(len(dts) - 1)]
    ratios = [e[i] / e[i + 1] for i in range(len(e) - 1)]
    # plane wave with no damping: |u|^2 constant, phase exp(-i(k^2 + A^2/2pi) t)
    Kp, k0, A = 8, 3, 1.7
    u0 = np.zeros(2 * Kp + 1, complex)
    u0[Kp + k0] = A
    out = evolve(u0, 1.0, Model(K=Kp, dt=1e-3, a=constant_profile(0.0)), store=False).fields[-1]
    exact = np.zeros_like(u0)
    exact[Kp + k0] = A * np.exp(-1j * (k0 * k0 + A * A / (2 * np.pi)))
    pw = float(np.max(np.abs(out - exact)))
    dt_run = time.perf_counter() - t0
    ok = all(3.6 <= r <= 4.4 for r in ratios) and pw <= 1e-6 and dt_run < 30
    record(1, ok, f"ratios {[fmt(r) for r in ratios]} in [3.6, 4.4]; plane-wave error {fmt(pw)} <= 1e-6; "
                  f"{dt_run:.1f}s < 30s")
    assert ok


# ---------------------------------------------------------------- 2

def test_criterion_02_energy_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    K = 32
    k = wavenumbers(K)
    c = random_field(rng, K, 3.0)
    base = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * np.exp(-np.abs(k))
    chi = window_bump()
    force = lambda t: multiply_profile(base * np.cos(3 * t), chi)
    dts = [4e-3, 2e-3, 1e-3, 5e-4]
    res = []
    for dt in dts:
        r = energy_identity_residuals(evolve(c, 1.0, Model(K=K, dt=dt), force=force), force)
        res.append((r["mass_l2"], r["energy_l2"]))
    res = np.array(res)
    orders = [float(linregress(np.log(dts), np.log(res[:, j])).slope) for j in range(2)]
    zero = energy_identity_residuals(evolve(np.zeros(2 * K + 1, complex), 0.1, Model(K=K, dt=1e-3)))
    exact_zero = zero["mass_max"] == 0.0 and zero["energy_max"] == 0.0
    dt_run = time.perf_counter() - t0
    ok = min(orders) >= 1.8 and exact_zero and dt_run < 60
    record(2, ok, f"fitted orders mass {fmt(orders[0])}, energy {fmt(orders[1])} >= 1.8; "
                  f"zero data exact: {exact_zero}; {dt_run:.1f}s < 60s")
    assert ok


# ---------------------------------------------------------------- 3

def _criterion3_beta(K):
    rng = np.random.default_rng(3)
    u0 = 0.5 * resize(rng.normal(size=5) + 1j * rng.normal(size=5), K)
    tr = evolve(u0, 20.0, Model(K=K, dt=1e-3))
    E = energy(tr.fields[::100])
    r = linregress(tr.times[::100], np.log(E))
    return float(-r.slope), float(r.rvalue ** 2)


def test_criterion_03_global_stabilization():
    t0 = time.perf_counter()
    b32, r32 = _criterion3_beta(32)
    b64, r64 = _criterion3_beta(64)
    proxy = -2 * spectral_abscissa(damping_bump(), 64)
    rel = abs(b64 - proxy) / proxy
    drift = abs(b64 - b32) / b32
    dt_run = time.perf_counter() - t0
    ok = min(r32, r64) >= 0.98 and rel <= 0.30 and drift < 0.15 and dt_run < 120
    record(3, ok, f"beta {fmt(b64)} (R^2 {fmt(r64)}), proxy {fmt(proxy)}, rel {fmt(rel)} <= 0.30; "
                  f"K 32->64 change {fmt(drift)} < 0.15; {dt_run:.1f}s < 120s")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_04_contraction(tmp_path_factory):
    m, _, secs = run_config("norms", tmp_path_factory)
    ch = checks_of(m)
    names = [f"contraction_{w}_s{s}" for s in (0, 2) for w in ("bump", "zero", "constant")]
    ok = all(ch[n].passed for n in names) and secs < 60
    record(4, ok, "; ".join(f"{n} {fmt(ch[n].value)}" for n in names) + f"; {secs:.1f}s < 60s")
    assert ok


# ---------------------------------------------------------------- 5

def test_criterion_05_resonant_decomposition():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    errs = []
    for p, K in ((3, 8), (5, 3)):
        cs = [random_field(rng, K, 0.5) for _ in range(p)]
        full, res = brute_T(cs), brute_T(cs, resonant_only=True)
        errs += [np.max(np.abs(apply_T(cs) - full)), np.max(np.abs(apply_TR(cs) - res)),
                 np.max(np.abs(apply_TN(cs) - (full - res)))]
    brute_err = float(max(errs))
    K = 64
    c = random_field(rng, K, 1.5)
    closed = []
    for p in (3, 5):
        g = coeffs_to_grid(c, 8 * K)
        closed.append(np.max(np.abs(apply_T([c] * p) - grid_to_coeffs(np.abs(g) ** (p - 1) * g, K))))
        closed.append(np.max(np.abs(apply_TR([c] * p) - gauge_rate(c, p) * c)))
    closed_err = float(max(closed))
    u, v = random_field(rng, K, 1.5), random_field(rng, K, 1.5)
    parts = potential_split(u, v, 3)
    recomp = float(np.max(np.abs(parts["gauge"] + parts["rank_one"] + parts["remainder"] - potential_full(u, v, 3))))
    dt_run = time.perf_counter() - t0
    ok = brute_err <= 1e-10 and closed_err <= 1e-10 and recomp <= 1e-10 and dt_run < 60
    record(5, ok, f"brute-force {fmt(brute_err)}, closed forms {fmt(closed_err)}, recomposition {fmt(recomp)} "
                  f"<= 1e-10; {dt_run:.1f}s < 60s")
    assert ok


# ---------------------------------------------------------------- 6

def test_criterion_06_smoothing(tmp_path_factory):
    m, out, secs = run_config("smoothing", tmp_path_factory)
    ch = checks_of(m)
    var, growth = ch["duhamel_variation"], ch["u_norm_growth"]
    ok = var.passed and growth.passed and secs < 300
    record(6, ok, f"Duhamel sup variation {fmt(var.value)} < 0.25; ||u||_H^(5/4) growth {fmt(growth.value)} >= 2; "
                  f"run {secs:.1f}s < 300s (shared with criterion 9)")
    assert ok


# ---------------------------------------------------------------- 7

def test_criterion_07_observability(tmp_path_factory):
    m, _, secs = run_config("observability", tmp_path_factory)
    ch = checks_of(m)
    names = ["l2_min_ratio", "constant_damping_closed_form", "gram_min_eig", "gram_N_ratio"]
    ok = all(n in ch and ch[n].passed for n in names) and secs < 180
    record(7, ok, "; ".join(f"{n} {fmt(ch[n].value)}" for n in names if n in ch) + f"; {secs:.1f}s < 180s")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_08_stabilization(tmp_path_factory):
    m, _, secs = run_config("stabilize", tmp_path_factory)
    ch = checks_of(m)
    names = ["max_q_linear", "terminal_projection", "nonlinear_gap_order", "q_convergence"]
    ok = all(ch[n].passed for n in names) and secs < 600
    record(8, ok, "; ".join(f"{n} {fmt(ch[n].value)}" for n in names) + f"; {secs:.1f}s < 600s")
    assert ok


# ---------------------------------------------------------------- 9

def test_criterion_09_high_frequency(tmp_path_factory):
    m, _, secs = run_config("smoothing", tmp_path_factory)
    ch = checks_of(m)
    hf, ce = ch["hf_slope"], ch["counterexample_drift"]
    ok = hf.passed and ce.passed and secs < 300
    record(9, ok, f"slope {fmt(hf.value)} <= {fmt(hf.threshold)}; counterexample drift {fmt(ce.value)} <= 1e-3; "
                  f"run {secs:.1f}s < 300s (shared with criterion 6)")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_carleman_flux(tmp_path_factory):
    m, _, secs = run_config("carleman", tmp_path_factory)
    ch = checks_of(m)
    names = ["carleman_finite", "carleman_refinement_drift", "flux_finite", "flux_refinement_drift"]
    ok = all(ch[n].passed for n in names) and secs < 300
    record(10, ok, "; ".join(f"{n} {fmt(ch[n].value)}" for n in names) + f"; {secs:.1f}s < 300s")
    assert ok


# ---------------------------------------------------------------- 11

def test_criterion_11_mixing(tmp_path_factory):
    m, _, secs = run_config("mixing", tmp_path_factory)
    ch = checks_of(m)
    names = ["gamma_band_excludes_zero", "pair_agreement", "noise_off_vs_energy_rate"]
    s = m.summary
    ok = all(ch[n].passed for n in names) and secs < 1800
    record(11, ok, f"gamma {fmt(s['gamma'])} band ({fmt(s['band'][0])}, {fmt(s['band'][1])}); pair 2 {fmt(s['gamma_pair2'])}; "
                   f"noise off {fmt(s['gamma_off'])} vs beta/2 {fmt(s['beta'] / 2)}; "
                   + "; ".join(f"{n} {ch[n].passed}" for n in names) + f"; {secs:.0f}s < 1800s")
    assert ok


# ---------------------------------------------------------------- 12

def test_criterion_12_coupling(tmp_path_factory):
    m, out, secs = run_config("coupling", tmp_path_factory)
    ch = checks_of(m)
    rows = (out / "coupling.csv").read_text().splitlines()[1:]
    ex = [r.split(",")[1] for r in rows]
    ok = ch["exceedance_monotone"].passed and ch["affine_origin_r2"].passed and secs < 900
    record(12, ok, f"exceedance {[fmt(float(x)) for x in ex]} monotone {ch['exceedance_monotone'].passed}; "
                   f"R^2 {fmt(ch['affine_origin_r2'].value)} >= 0.9; {secs:.0f}s < 900s")
    assert ok


# ---------------------------------------------------------------- 13

SMALL = {
    "simulate": dict(model=dict(K=32), run=dict(horizon=3.0)),
    "mixing": dict(model=dict(K=32, dt=1.0e-2), run=dict(members=130, epochs=4)),
    "coupling": dict(model=dict(K=32), control=dict(N=16), run=dict(trials=2)),
    "carleman": dict(model=dict(K=32), run=dict(trials=2)),
    "stabilize": dict(model=dict(K=32), control=dict(N=16), run=dict(trials=2)),
}


def test_criterion_13_determinism(tmp_path, monkeypatch):
    from nlslab.config import from_dict

    mismatches = []
    for kind, over in SMALL.items():
        cfg = from_dict(dict(kind=kind, **over))
        digests = []
        for workers in ("1", "2", "1"):
            monkeypatch.setenv("NLSLAB_WORKERS", workers)
            out = tmp_path / f"{kind}_{workers}_{len(digests)}"
            m = run_experiment(cfg, out)
            digests.append({f["name"]: (out / f["name"]).read_bytes() for f in m.files
                            if f["name"].endswith(".csv")})
        if not (digests[0] == digests[1] == digests[2]):
            mismatches.append(kind)
    ok = not mismatches
    record(13, ok, f"CSV bodies byte-identical over reruns and worker counts 1/2 for {sorted(SMALL)}"
                   + (f"; mismatched: {mismatches}" if mismatches else ""))
    assert ok
