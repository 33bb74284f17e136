"""Experiment runner: dispatches a validated config to its pipeline, writes
deterministic CSV files and returns a run manifest."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .control import (
    ControlProblem,
    hum_minimize,
    observability_constant,
    regular_reference,
    solve_linearized,
    stabilize_linear,
    stabilize_nonlinear,
)
from .diagnostics import (
    carleman_check,
    counterexample_run,
    duhamel_smoothing_check,
    energy_decay_fit,
    flux_check,
    hf_dissipation_check,
    l2_observability_check,
    l2_observability_ratio,
    rough_data,
)
from .dynamics import BLOWUP_H1, Model, energy, evolve
from .mixing import ObservableSuite, coupling_experiment, mixing_rate_fit, run_chain
from .noise import block_force, sample_block, stream_key, zero_spec
from .norms import EquivalentNormSpec, contraction_factor, h_tilde_norm, kato_ponce_check
from .spectral import constant_profile, japanese, resize, sobolev_norm


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    relation: str = "<="
    required: bool = True


@dataclass
class RunManifest:
    config_hash: str
    version: str
    kind: str
    seed: int
    wall_clock: float
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=1, sort_keys=True, default=_json_default)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d["checks"] = [Check(**c) for c in d.get("checks", [])]
        return cls(**d)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path: Path, header: list, rows) -> Path:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(v) for v in r))
    path.write_text("\n".join(lines) + "\n")
    return path


def _file_entry(path: Path, root: Path) -> dict:
    data = path.read_bytes()
    return dict(name=str(path.relative_to(root)), sha256=hashlib.sha256(data).hexdigest(), bytes=len(data))


def _seed(cfg: ExperimentConfig, *parts) -> int:
    return int(stream_key(cfg.run.seed, *parts) >> np.uint64(1))


def initial_data(cfg: ExperimentConfig, K: int, seed: int) -> np.ndarray:
    kind, amp = cfg.run.initial, cfg.run.amplitude
    if kind == "zero":
        return np.zeros(2 * K + 1, dtype=complex)
    if kind == "rough":
        return amp * rough_data(K, seed)
    rng = np.random.default_rng(seed)
    c = np.zeros(2 * K + 1, dtype=complex)
    c[K - 2:K + 3] = rng.normal(size=5) + 1j * rng.normal(size=5)
    return amp * c / np.linalg.norm(c)


def regular_direction(K: int, s: float, seed: int, decay: float = 1.0) -> np.ndarray:
    """Random data with coefficients <k>^{-(s+decay)} scaled to unit H^s norm."""
    rng = np.random.default_rng(seed)
    c = (rng.normal(size=2 * K + 1) + 1j * rng.normal(size=2 * K + 1)) * japanese(K) ** -(s + decay)
    return c / sobolev_norm(c, s)


def noise_force(spec, seed: int, horizon: float):
    """Piecewise force built from consecutive blocks over [0, horizon)."""
    n_blocks = int(np.ceil(horizon / spec.T - 1e-12))
    forces = [block_force(sample_block(spec, seed, n), n * spec.T) for n in range(n_blocks)]

    def f(t):
        n = min(int(t // spec.T), n_blocks - 1)
        return forces[n](t)

    return f


# ------------------------------------------------------------------ kinds

def _simulate(cfg, out):
    model = cfg.model.build()
    spec = cfg.noise.build(cfg.model, cfg.control.s)
    epochs = int(round(cfg.run.horizon / cfg.model.T))
    u0 = initial_data(cfg, model.K, _seed(cfg, 1))
    states = run_chain(u0, spec, epochs, _seed(cfg, 2), model)
    rows = [(n, float(0.5 * np.sum(np.abs(c) ** 2)), float(energy(c, model.p)), float(sobolev_norm(c, 1)))
            for n, c in enumerate(states)]
    files = [write_table(out / "chain.csv", ["epoch", "mass", "energy", "h1"], rows)]
    h1 = max(r[3] for r in rows)
    checks = [Check("bounded_h1", h1, BLOWUP_H1, bool(h1 < BLOWUP_H1))]
    if spec.is_zero and not np.any(u0):
        checks.append(Check("zero_orbit", h1, 0.0, h1 == 0.0))
    return checks, files, dict(final_energy=rows[-1][2])


def _stabilize(cfg, out):
    model = cfg.model.build()
    c = cfg.control
    chi = cfg.model.chi.build("chi")
    rows, qs, gaps = [], [], []
    first = None
    for i in range(cfg.run.trials):
        ref = regular_reference(model, _seed(cfg, 10, i), T=cfg.model.T, chi=chi)
        pb = ControlProblem(ref, chi=chi, s=c.s, sigma=c.sigma, sigma_prime=c.sigma, m=c.m, N=c.N)
        v0 = regular_direction(model.K, c.s, _seed(cfg, 11, i))
        v0 = v0 / h_tilde_norm(v0, pb.norm)
        res = stabilize_linear(pb, v0, tol=c.terminal_tol)
        gap = res.artifacts["terminal_gap"]
        rows.append((i, res.q_achieved, gap, res.cg_iterations, res.cg_residual, res.observability))
        qs.append(res.q_achieved)
        gaps.append(gap)
        if first is None:
            first = (pb, v0, res)
    files = [write_table(out / "stabilize.csv",
                         ["reference", "q_linear", "terminal_gap", "cg_iterations", "cg_residual",
                          "observability"], rows)]
    pb, v0, lin = first
    seps = [1e-1, 1e-2, 1e-3, 1e-4]
    nl_rows, gap_nl = [], []
    for eps in seps:
        scaled = stabilize_linear(pb, eps * v0, tol=c.terminal_tol)
        r = stabilize_nonlinear(pb, pb.reference.fields[0] + eps * v0, linear=scaled)
        nl_rows.append((eps, r.q_achieved, lin.q_achieved, r.artifacts["gap"]))
        gap_nl.append(r.artifacts["gap"])
    files.append(write_table(out / "nonlinear.csv", ["separation", "q_nonlinear", "q_linear", "gap"], nl_rows))
    order = float(np.polyfit(np.log(seps), np.log(gap_nl), 1)[0])
    qdiff = [abs(r[1] - r[2]) for r in nl_rows]
    checks = [
        Check("max_q_linear", max(qs), 1.0, max(qs) < 1, "<"),
        Check("terminal_projection", max(gaps), c.terminal_tol, max(gaps) <= c.terminal_tol),
        Check("nonlinear_gap_order", order, 1.8, order >= 1.8, ">="),
        Check("q_convergence", qdiff[-1], qdiff[0], bool(np.all(np.diff(qdiff) <= 0) and qdiff[-1] < qdiff[0]), "<"),
    ]
    return checks, files, dict(max_q=max(qs), gap_order=order)


def _control(cfg, out):
    model = cfg.model.build()
    c = cfg.control
    chi = cfg.model.chi.build("chi")
    ref = regular_reference(model, _seed(cfg, 20), T=cfg.model.T, chi=chi)
    y0 = regular_direction(model.K, c.s + c.sigma_prime, _seed(cfg, 21))
    rows = []
    Ns = [c.N] + ([2 * c.N] if 2 * c.N <= model.K else [])
    results = {}
    for N in Ns:
        pb = ControlProblem(ref, chi=chi, s=c.s, sigma=c.sigma, sigma_prime=c.sigma_prime, m=c.m, N=N)
        res = hum_minimize(pb, y0)
        v = solve_linearized(pb, y0, res.control, store=False).fields[-1]
        term = float(np.max(np.abs(resize(v, c.m))))
        rows.append((N, res.observability, res.cg_iterations, res.cg_residual, term, res.cost))
        results[N] = (res, term)
    files = [write_table(out / "control.csv",
                         ["N", "observability", "cg_iterations", "cg_residual", "terminal", "cost"], rows)]
    res, term = results[c.N]
    checks = [
        Check("terminal_projection", term, c.terminal_tol, term <= c.terminal_tol),
        Check("cg_residual", res.cg_residual, c.cg_tol, res.cg_residual <= c.cg_tol),
        Check("observability_positive", res.observability, 0.0, res.observability > 0, ">"),
    ]
    if len(Ns) > 1:
        ratio = results[Ns[1]][0].observability / res.observability
        checks.append(Check("observability_N_ratio", ratio, 2.0, bool(0.5 <= ratio <= 2.0)))
    return checks, files, dict(observability=res.observability)


def _observability(cfg, out):
    model = cfg.model.build()
    K, T = model.K, cfg.model.T
    chk = l2_observability_check(model.a, K, T, samples=200, seed=_seed(cfg, 30))
    a0 = 0.5
    rng = np.random.default_rng(_seed(cfg, 31))
    u0 = rng.normal(size=(8, 2 * K + 1)) + 1j * rng.normal(size=(8, 2 * K + 1))
    const = l2_observability_ratio(constant_profile(a0), u0, T)
    closed = (1 - np.exp(-2 * a0 * T)) / 2
    zero = l2_observability_ratio(constant_profile(0.0), u0, T)
    c = cfg.control
    chi = cfg.model.chi.build("chi")
    ref = regular_reference(model, _seed(cfg, 32), T=T, chi=chi)
    grams = []
    for N in sorted({c.N, min(2 * c.N, K)}):
        pb = ControlProblem(ref, chi=chi, s=c.s, sigma=c.sigma, sigma_prime=c.sigma_prime, m=c.m, N=N)
        grams.append((N, observability_constant(pb)))
    rows = [("l2_min_ratio", chk.value), ("l2_gramian_min", chk.extras["gramian_min"]),
            ("constant_error", float(np.max(np.abs(const - closed)))), ("zero_max", float(np.max(np.abs(zero))))]
    rows += [(f"gram_N{N}", g) for N, g in grams]
    files = [write_table(out / "observability.csv", ["case", "value"], rows)]
    checks = [
        Check("l2_min_ratio", chk.value, 0.0, chk.passed, ">"),
        Check("constant_damping_closed_form", rows[2][1], 1e-6, rows[2][1] <= 1e-6),
        Check("gram_min_eig", grams[0][1], 0.0, grams[0][1] > 0, ">"),
    ]
    if len(grams) > 1:
        ratio = grams[1][1] / grams[0][1]
        checks.append(Check("gram_N_ratio", ratio, 2.0, bool(0.5 <= ratio <= 2.0)))
    return checks, files, dict(l2_min=chk.value)


def _carleman(cfg, out):
    model = cfg.model.build()
    spec = cfg.noise.build(cfg.model, cfg.control.s)
    T = cfg.model.T
    rows = []
    for i in range(cfg.run.trials):
        u0 = initial_data(cfg, model.K, _seed(cfg, 40, i))
        f = None if spec.is_zero else block_force(sample_block(spec, _seed(cfg, 41, i), 0))
        vals = []
        for refine in (1, 2):
            m = model.with_(dt=model.dt / refine)
            tr = evolve(u0, T, m, force=f)
            vals.append((carleman_check(tr, f, M=4 * model.K * refine).value, flux_check(tr, f).value))
        rows.append((i, vals[0][0], vals[1][0], vals[0][1], vals[1][1]))
    files = [write_table(out / "carleman.csv",
                         ["solution", "carleman_coarse", "carleman_fine", "flux_coarse", "flux_fine"], rows)]
    car = np.array([[r[1], r[2]] for r in rows])
    flx = np.array([[r[3], r[4]] for r in rows])
    dc = float(np.max(np.abs(car[:, 1] - car[:, 0]) / car[:, 0]))
    df = float(np.max(np.abs(flx[:, 1] - flx[:, 0]) / flx[:, 0]))
    checks = [
        Check("carleman_finite", float(car.max()), 1e3, bool(np.all(np.isfinite(car)) and car.max() < 1e3), "<"),
        Check("carleman_refinement_drift", dc, 0.1, dc < 0.1, "<"),
        Check("flux_finite", float(flx.max()), np.inf, bool(np.all(np.isfinite(flx))), "<"),
        Check("flux_refinement_drift", df, 0.1, df < 0.1, "<"),
    ]
    return checks, files, dict(carleman_max=float(car.max()), flux_max=float(flx.max()))


def _smoothing(cfg, out):
    c = cfg.control
    rows = []
    for K in cfg.run.K_sweep:
        mc = cfg.model
        model = Model(K=K, p=mc.p, dt=mc.dt, a=mc.a.build("a"), nonlinear=mc.nonlinear)
        spec = cfg.noise.build(dataclasses.replace(mc, K=K), c.s)
        force = None if spec.is_zero else noise_force(spec, _seed(cfg, 50), cfg.run.horizon)
        u0 = rough_data(K, _seed(cfg, 51))
        r = duhamel_smoothing_check(u0, model, c.sigma, cfg.run.horizon, force=force)
        rows.append((K, r.value, r.extras["u_norm_sup"]))
    files = [write_table(out / "smoothing.csv", ["K", "sup_duhamel", "sup_u_norm"], rows)]
    sup = np.array([r[1] for r in rows])
    un = np.array([r[2] for r in rows])
    variation = float(np.max(np.abs(np.diff(sup)) / sup[:-1]))
    growth = float(un[-1] / un[0])
    # high-frequency dissipation along a regular reference at the largest K
    Kmax = max(cfg.run.K_sweep)
    model = Model(K=Kmax, p=cfg.model.p, dt=cfg.model.dt, a=cfg.model.a.build("a"))
    chi = cfg.model.chi.build("chi")
    ref = regular_reference(model, _seed(cfg, 52), T=cfg.model.T, chi=chi)
    pb = ControlProblem(ref, chi=chi, s=c.s, sigma=c.sigma, sigma_prime=c.sigma, m=1, N=1)
    v0 = regular_direction(Kmax, c.s, _seed(cfg, 53), decay=1.0)
    m_list = [m for m in (8, 16, 32, 64) if m < Kmax]
    if len(m_list) < 3:
        m_list = [max(1, Kmax // 8), max(2, Kmax // 4), Kmax // 2]
    hf = hf_dissipation_check(pb, v0, m_list)
    files.append(write_table(out / "hf_dissipation.csv", ["m", "norm"], zip(hf.extras["m"], hf.extras["norms"])))
    rng = np.random.default_rng(_seed(cfg, 54))
    multi = resize(rng.normal(size=9) + 1j * rng.normal(size=9), 16)
    ce = counterexample_run(1.0, multi, T=cfg.model.T, dt=cfg.model.dt)
    checks = [
        Check("duhamel_variation", variation, 0.25, variation < 0.25, "<"),
        Check("u_norm_growth", growth, 2.0, growth >= 2.0, ">="),
        Check("hf_slope", hf.value, hf.threshold, hf.passed),
        Check("counterexample_drift", ce.value, ce.threshold, ce.passed),
    ]
    return checks, files, dict(variation=variation, growth=growth, hf_slope=hf.value)


def _norms(cfg, out):
    model = cfg.model.build()
    K, T = model.K, cfg.model.T
    rows = []
    for s in (0, 2):
        q = contraction_factor(T, EquivalentNormSpec(s, model.a, K))
        q0 = contraction_factor(T, EquivalentNormSpec(s, constant_profile(0.0), K, A=1.0))
        a0 = 0.3
        qc = contraction_factor(T, EquivalentNormSpec(s, constant_profile(a0), K))
        rows.append((s, q, q0, qc, float(np.exp(-a0 * T))))
    kp = kato_ponce_check(min(K, 32), 1.5, n_pairs=100, seed=_seed(cfg, 60))
    files = [write_table(out / "norms.csv", ["s", "bump", "zero", "constant", "constant_exact"], rows)]
    checks = []
    for s, q, q0, qc, ex in rows:
        checks += [Check(f"contraction_bump_s{s}", q, 1.0, q < 1, "<"),
                   Check(f"contraction_zero_s{s}", abs(q0 - 1), 1e-10, abs(q0 - 1) <= 1e-10),
                   Check(f"contraction_constant_s{s}", abs(qc - ex), 1e-8, abs(qc - ex) <= 1e-8)]
    checks.append(Check("product_estimate_ratio", kp, np.inf, bool(np.isfinite(kp)), "<", False))
    return checks, files, dict(kato_ponce=kp)


MIXING_PAIRS = (((0, 0.0), (0, 1.5), (1, 1.0)), ((-1, 1 + 1j), (0, -1.2), (2, 0.8)))


def mixing_pairs(K: int):
    """Two fixed pairs of distinct initial data."""
    def field_of(terms):
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, v in terms:
            c[K + k] += v
        return c

    (a1, b1, b2), (c1, d1, d2) = MIXING_PAIRS
    return [(field_of([a1]), field_of([b1, b2])), (field_of([c1]), field_of([d1, d2]))]


def _mixing(cfg, out):
    model = cfg.model.build()
    spec = cfg.noise.build(cfg.model, cfg.control.s)
    suite = ObservableSuite.default(p=model.p)
    n, members = cfg.run.epochs, cfg.run.members
    fits = []
    rows = []
    for ip, (ua, ub) in enumerate(mixing_pairs(model.K)):
        fit = mixing_rate_fit(ua, ub, spec, n, members, _seed(cfg, 70, ip), model, suite)
        fits.append(fit)
        for e in range(fit.per_observable.shape[0]):
            for j, name in enumerate(suite.names):
                rows.append((ip, e, name, fit.per_observable[e, j], fit.floor_per_observable[e, j]))
            rows.append((ip, e, "max", fit.distances[e], fit.floor_series[e]))
    files = [write_table(out / "mixing.csv", ["pair", "epoch", "observable", "distance", "floor"], rows)]
    zero = zero_spec(K=model.K, T=cfg.model.T, chi=spec.chi)
    ua, ub = mixing_pairs(model.K)[0]
    off = mixing_rate_fit(ua, ub, zero, min(n, 20), 1, _seed(cfg, 71), model, suite)
    beta = energy_decay_fit(ub, model, horizon=20.0, sample_every=max(1, int(round(0.1 / model.dt))))
    fit_rows = [(f"pair{i}", f.gamma, f.stderr, f.band[0], f.band[1], f.floor, len(f.epochs_used))
                for i, f in enumerate(fits)]
    fit_rows.append(("noise_off", off.gamma, off.stderr, off.band[0], off.band[1], 0.0, len(off.epochs_used)))
    fit_rows.append(("energy_beta", beta.value, 0.0, beta.value, beta.value, 0.0, 0))
    files.append(write_table(out / "mixing_fits.csv",
                             ["fit", "gamma", "stderr", "band_lo", "band_hi", "floor", "epochs_used"], fit_rows))
    rel = abs(off.gamma - beta.value / 2) / (beta.value / 2)
    checks = [
        Check("gamma_band_excludes_zero", fits[0].band[0], 0.0, fits[0].excludes_zero(), ">"),
        Check("pair_agreement", abs(fits[0].gamma - fits[1].gamma),
              1.96 * float(np.hypot(fits[0].stderr, fits[1].stderr)), fits[0].agrees_with(fits[1])),
        Check("noise_off_vs_energy_rate", float(rel), 0.3, bool(rel <= 0.3)),
    ]
    summary = dict(gamma=fits[0].gamma, band=list(fits[0].band), gamma_pair2=fits[1].gamma,
                   gamma_off=off.gamma, beta=beta.value)
    return checks, files, summary


def _coupling(cfg, out):
    model = cfg.model.build()
    spec = cfg.noise.build(cfg.model, cfg.control.s)
    c = cfg.control
    y1 = initial_data(cfg, model.K, _seed(cfg, 80))
    rng = np.random.default_rng(_seed(cfg, 81))
    d = np.zeros(2 * model.K + 1, dtype=complex)
    d[model.K - 2:model.K + 3] = rng.normal(size=5) + 1j * rng.normal(size=5)
    res = coupling_experiment(y1, d, spec, model, cfg.run.separations, cfg.run.trials, _seed(cfg, 82),
                              q=c.q, s=c.s, sigma=c.sigma, m=c.m, N=c.N, d_max=c.d)
    rows = [(sep, res.exceedance[i], res.exceedance_sampled[i], float(np.mean(res.acceptance[:, i])),
             float(np.nanmean(res.q_nl[:, i]))) for i, sep in enumerate(res.separations)]
    files = [write_table(out / "coupling.csv",
                         ["separation", "exceedance", "exceedance_sampled", "mean_acceptance", "mean_q"], rows)]
    checks = [
        Check("exceedance_monotone", float(res.monotone), 1.0, res.monotone, ">="),
        Check("affine_origin_r2", res.r2, 0.9, bool(res.r2 >= 0.9), ">="),
    ]
    return checks, files, dict(slope=res.slope, r2=res.r2, flags=res.flags)


KIND_RUNNERS = dict(simulate=_simulate, stabilize=_stabilize, control=_control, observability=_observability,
                    carleman=_carleman, smoothing=_smoothing, norms=_norms, mixing=_mixing, coupling=_coupling)


def run_experiment(cfg: ExperimentConfig, output=None) -> RunManifest:
    out = Path(cfg.run.output if output is None else output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    checks, files, summary = KIND_RUNNERS[cfg.kind](cfg, out)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    files = list(files) + [out / "config.json"]
    manifest = RunManifest(cfg.hash(), __version__, cfg.kind, cfg.run.seed, time.perf_counter() - t0,
                           checks, [_file_entry(p, out) for p in files],
                           json.loads(json.dumps(summary, default=_json_default)))
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


# ---------------------------------------------------------------- reports

REPORT_COLUMNS = ["name", "value", "threshold", "relation", "passed", "required"]


def report(manifest: RunManifest, fmt: str = "markdown") -> str:
    rows = [[c.name, c.value, c.threshold, c.relation, c.passed, c.required] for c in manifest.checks]
    if fmt == "json":
        return json.dumps([dict(zip(REPORT_COLUMNS, r)) for r in rows], indent=1, default=_json_default)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()
    if fmt in ("markdown", "markdown-table"):
        lines = ["| check | value | threshold | relation | pass | required |",
                 "|---|---|---|---|---|---|"]
        for r in rows:
            lines.append("| " + " | ".join(_fmt(v) for v in r) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_csv_report(text: str) -> list[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(dict(name=row["name"], value=float(row["value"]), threshold=float(row["threshold"]),
                        relation=row["relation"], passed=row["passed"] == "true",
                        required=row["required"] == "true"))
    return out


def seed_sweep(cfg: ExperimentConfig, seeds, output=None) -> list[RunManifest]:
    base = Path(cfg.run.output if output is None else output)
    manifests = []
    rows = []
    for s in seeds:
        m = run_experiment(cfg.with_seed(s), base / f"seed_{s}")
        manifests.append(m)
        rows += [(s, c.name, c.value, c.passed) for c in m.checks]
    write_table(base / "sweep.csv", ["seed", "check", "value", "passed"], rows)
    return manifests
