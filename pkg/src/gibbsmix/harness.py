"""Experiment runners, report files and run manifests.

Every runner writes CSV files into a run directory and returns the list of
files; :func:`write_manifest` then records the resolved config, seeds, tool
version, a timestamp and a SHA-256 of every file. The timestamp lives only in
the manifest, so reruns reproduce the CSVs byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

from . import __version__, bounds, diagnostics, isoperimetry as iso
from .chain import (RNG_ALGORITHM, ChainConfig, GaussianLaw, point_start, run_ensemble,
                    write_trajectory_csv)
from .config import ExperimentConfig, resolve_config
from .targets import (TargetDensity, logcosh_piece, make_gaussian, make_perturbed_gaussian,
                      make_separable, make_two_point_gaussian)

__all__ = [
    "RunResult", "SweepRow", "build_target", "cell_seed", "run_sweep", "sweep_cell",
    "emit_report", "fit_exponent", "run_bounds", "run_sample", "run_calibrate",
    "run_verify_isoperimetry", "run_experiment", "write_manifest", "rerun_manifest",
    "EXIT_OK", "EXIT_VIOLATIONS", "EXIT_ERROR",
]

EXIT_OK, EXIT_VIOLATIONS, EXIT_ERROR = 0, 1, 2
MANIFEST = "manifest.json"


@dataclass
class RunResult:
    kind: str
    output_dir: str
    files: list
    violations: int = 0
    summary: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_VIOLATIONS if self.violations else EXIT_OK


# ---------------------------------------------------------------- helpers

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list, rows: list) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _outdir(cfg: ExperimentConfig, override=None) -> Path:
    d = Path(override or cfg.output_dir)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {d}: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise OSError(f"output directory {d} is not writable")
    return d


def cell_seed(base_seed: int, index: int) -> int:
    """Deterministic 63-bit seed for sweep cell ``index``."""
    state = np.random.SeedSequence(base_seed, spawn_key=(index,)).generate_state(1, np.uint64)
    return int(state[0]) >> 1


def build_target(family: str, n: int, kappa: float = 1.0, params: dict | None = None,
                 seed: int = 0) -> TargetDensity:
    """Named target families used by the configs."""
    p = dict(params or {})
    if family == "two_point":
        return make_two_point_gaussian(n, mu=p.get("mu", 1.0), kappa=kappa, rotation_seed=seed)
    if family == "gaussian":
        if "precision" in p:
            return make_gaussian(np.array(p["precision"], dtype=float), p.get("mean"))
        rho = p.get("rho", 0.0)
        cov = (1.0 - rho) * np.eye(n) + rho * np.ones((n, n))
        return make_gaussian(np.linalg.inv(cov), p.get("mean"))
    if family == "logcosh":
        return make_separable([logcosh_piece(p.get("weight", 1.0))] * n)
    if family == "perturbed_gaussian":
        base = make_two_point_gaussian(n, mu=1.0, kappa=kappa, rotation_seed=seed)
        return make_perturbed_gaussian(base.precision, None, p.get("weight", 1.0))
    raise ValueError(f"unknown target family {family!r}")


def _start(opts: dict, target: TargetDensity):
    """(start sampler, warmness M or None, start law or None)."""
    kind = opts["type"]
    if kind == "point":
        x0 = target.mode if opts.get("x0") is None else np.asarray(opts["x0"], dtype=float)
        return point_start(x0), None, None
    if not target.is_gaussian:
        raise ValueError("Gaussian starts need a Gaussian target")
    cov = np.linalg.inv(target.precision)
    if kind == "target":
        law = GaussianLaw(target.mean, cov)
        return law.sampler(), 1.0, law
    c = float(opts["c"])
    law = GaussianLaw(target.mean, c * cov)
    return law.sampler(), diagnostics.warmness_underdispersed_gaussian(c, target.dim), law


def _chain(opts: dict, seed: int) -> ChainConfig:
    return ChainConfig(lazy=opts["lazy"], scan=opts["scan"], seed=seed, thin=opts["thin"])


# ---------------------------------------------------------------- sweep

SWEEP_HEADER = ["n", "kappa", "M", "gamma", "tau_hat", "censored",
                "tau_bound_lee_vempala", "tau_bound_chen", "seed"]


@dataclass
class SweepRow:
    n: int
    kappa: float
    M: float
    gamma: float
    tau_hat: int | None
    censored: bool
    tau_bound_lee_vempala: float | None
    tau_bound_chen: float | None
    seed: int
    error: str = ""

    def values(self) -> list:
        return [self.n, float(self.kappa), float(self.M), float(self.gamma), self.tau_hat,
                self.censored, self.tau_bound_lee_vempala, self.tau_bound_chen, self.seed]


def sweep_cell(args: tuple) -> SweepRow:
    """One (n, kappa) cell: rotated two-point Gaussian, underdispersed start."""
    n, kappa, seed, v = args
    M = diagnostics.warmness_underdispersed_gaussian(v["start"]["c"], n)
    try:
        target = make_two_point_gaussian(n, 1.0, kappa, rotation_seed=seed)
        sampler, M, law = _start(v["start"], target)
        M = 1.0 if M is None else M
        est = diagnostics.estimate_mixing_time(
            target, sampler, v["threshold"], v["criterion"],
            replicas=v["replicas_per_dim"] * (n + 1), T_max=v["T_max"], seed=seed,
            config=_chain(v["chain"], seed), start_law=law, warmness=M)
        lv = bounds.mixing_time_bound(kappa, n, M, v["gamma"], "lee_vempala").tau
        ch = bounds.mixing_time_bound(kappa, n, M, v["gamma"], "chen").tau if n >= 3 else None
        return SweepRow(n, kappa, M, v["gamma"], est.tau_hat, est.censored, lv, ch, seed)
    except Exception as exc:  # recorded per cell; the sweep continues
        return SweepRow(n, kappa, M, v["gamma"], None, False, None, None, seed,
                        f"{type(exc).__name__}: {exc}")


def run_sweep(cfg: ExperimentConfig) -> list[SweepRow]:
    v = cfg.resolved()
    cells = [(n, float(k)) for k in v["kappas"] for n in v["dims"]]
    args = [(n, k, cell_seed(v["seed"], i), v) for i, (n, k) in enumerate(cells)]
    if v["workers"] > 1:
        with ProcessPoolExecutor(max_workers=v["workers"]) as pool:
            return list(pool.map(sweep_cell, args))
    return [sweep_cell(a) for a in args]


def fit_exponent(ns, taus, level: float = 0.95) -> dict:
    """Least-squares slope of log tau vs log n with a t-based confidence interval."""
    ns = np.asarray(ns, dtype=float)
    taus = np.asarray(taus, dtype=float)
    ok = taus > 0
    ns, taus = ns[ok], taus[ok]
    if len(ns) < 3:
        return {"exponent": math.nan, "ci_low": math.nan, "ci_high": math.nan, "points": len(ns)}
    res = stats.linregress(np.log(ns), np.log(taus))
    half = stats.t.ppf(0.5 + level / 2, len(ns) - 2) * res.stderr
    return {"exponent": float(res.slope), "ci_low": float(res.slope - half),
            "ci_high": float(res.slope + half), "points": int(len(ns))}


def _inversions(seq) -> int:
    vals = [x for x in seq if x is not None]
    return sum(1 for a, b in zip(vals, vals[1:]) if b < a)


def emit_report(rows: list[SweepRow], outdir, plot_data: bool = True) -> tuple[list, int, str]:
    """Write sweep.csv, fit.csv, summary.txt and plot-data series.

    Returns (files, violation count, summary text).
    """
    if not rows:
        raise ValueError("no results to report")
    outdir = Path(outdir)
    files = [_write_csv(outdir / "sweep.csv", SWEEP_HEADER, [r.values() for r in rows])]
    kappas = sorted({r.kappa for r in rows})
    dims = sorted({r.n for r in rows})
    good = [r for r in rows if not r.error]
    above = [r for r in good if r.tau_hat is not None and not r.censored
             and r.tau_hat > r.tau_bound_lee_vempala]
    fit_rows, lines = [], []
    inv_n = inv_k = 0
    for k in kappas:
        sel = sorted((r for r in good if r.kappa == k and not r.censored), key=lambda r: r.n)
        f = fit_exponent([r.n for r in sel], [r.tau_hat for r in sel])
        fit_rows.append([k, f["exponent"], f["ci_low"], f["ci_high"], f["points"]])
        inv = _inversions([r.tau_hat for r in sel])
        inv_n += max(0, inv - 1)
        lines.append(f"kappa={k:g}: exponent {f['exponent']:.3f} "
                     f"[{f['ci_low']:.3f}, {f['ci_high']:.3f}] over {f['points']} dims; "
                     f"inversions in n: {inv}")
        if plot_data:
            files.append(_write_csv(outdir / f"plot_n_vs_tau_hat_kappa{k:g}.csv", ["n", "tau_hat"],
                                    [[r.n, r.tau_hat] for r in sel]))
            files.append(_write_csv(outdir / f"plot_n_vs_bound_kappa{k:g}.csv", ["n", "tau_bound"],
                                    [[r.n, r.tau_bound_lee_vempala] for r in sel]))
    for n in dims:
        sel = sorted((r for r in good if r.n == n and not r.censored), key=lambda r: r.kappa)
        inv = _inversions([r.tau_hat for r in sel])
        inv_k += max(0, inv - 1)
        if len(sel) > 1:
            lines.append(f"n={n}: inversions in kappa: {inv}")
    files.append(_write_csv(outdir / "fit.csv",
                            ["kappa", "exponent", "ci_low", "ci_high", "points"], fit_rows))
    table = ["n  kappa  M  tau_hat  censored  tau_bound_lee_vempala  error"]
    for r in rows:
        table.append(f"{r.n}  {r.kappa:g}  {r.M:.6g}  {r.tau_hat}  {r.censored}  "
                     f"{_fmt(r.tau_bound_lee_vempala)}  {r.error}")
    errors = [r for r in rows if r.error]
    lines.append(f"cells: {len(rows)}; failed cells: {len(errors)}; "
                 f"censored: {sum(r.censored for r in good)}; tau_hat above bound: {len(above)}")
    summary = "\n".join(table + [""] + lines) + "\n"
    (outdir / "summary.txt").write_text(summary)
    files.append(outdir / "summary.txt")
    return files, len(above) + inv_n + inv_k + len(errors), summary


# ---------------------------------------------------------------- other kinds

def run_bounds(cfg: ExperimentConfig, outdir: Path) -> RunResult:
    v = cfg.resolved()
    c = bounds.Constants(c_prime=v["c_prime"])
    variants = ["lee_vempala"] + (["chen"] if v["n"] >= 3 else []) + \
        (["isotropic"] if v["kappa"] == 1 else [])
    rows, text = [], []
    for var in variants:
        rep = bounds.bound_report(v["n"], float(v["kappa"]), float(v["M"]), v["gamma"],
                                  mu=v["mu"], lipschitz=v["lipschitz"], variant=var, constants=c)
        rows += [[var, k, val] for k, val in rep.rows()]
        text.append(rep.as_text())
    f = _write_csv(outdir / "bounds.csv", ["variant", "quantity", "value"], rows)
    summary = "\n\n".join(text) + "\n"
    (outdir / "summary.txt").write_text(summary)
    return RunResult("bounds", str(outdir), [f, outdir / "summary.txt"], 0, summary)


def run_sample(cfg: ExperimentConfig, outdir: Path) -> RunResult:
    v = cfg.resolved()
    t = v["target"]
    target = build_target(t["family"], v["n"], float(v["kappa"]), t["params"], v["seed"])
    sampler, M, _ = _start(v["start"], target)
    config = _chain(v["chain"], v["seed"])
    trajs = run_ensemble(target, sampler, v["replicas"], v["T"], v["seed"], config)
    files, rows = [], []
    for tr in trajs:
        p = outdir / f"trajectory_{tr.replica}.csv"
        write_trajectory_csv(tr, p)
        files.append(p)
        ess = (diagnostics.ess_autocorrelation(tr, 0)[0] if tr.states.shape[0] >= 100
               else None)
        rows.append([tr.replica, tr.T] + [float(x) for x in tr.final] + [ess])
    header = ["replica", "T"] + [f"final_x_{j}" for j in range(target.dim)] + ["ess_x_0"]
    files.append(_write_csv(outdir / "sample_summary.csv", header, rows))
    summary = f"{len(trajs)} trajectories of {v['T']} steps; start warmness {M}\n"
    return RunResult("sample", str(outdir), files, 0, summary)


def run_calibrate(cfg: ExperimentConfig, outdir: Path) -> RunResult:
    """Diagnostics on exact draws: histogram TV, per-coordinate KS, ESS."""
    v = cfg.resolved()
    n = v["n"]
    target = make_two_point_gaussian(n, 1.0, float(v["kappa"]), rotation_seed=v["seed"]) \
        if n >= 2 else make_gaussian(np.eye(1))
    cov = np.linalg.inv(target.precision)
    rng = np.random.default_rng(v["seed"])
    X = target.mean + rng.standard_normal((v["samples"], n)) @ np.linalg.cholesky(cov).T
    rows = []
    tv = diagnostics.histogram_tv(X, target, bins=v["bins"])
    rows.append(["histogram_tv", tv, 0.05, tv <= 0.05])
    crit = 1.95 / math.sqrt(v["samples"])
    for j in range(n):
        ks = diagnostics.ks_statistic(X[:, j], stats.norm(target.mean[j], math.sqrt(cov[j, j])).cdf)
        rows.append([f"ks_x_{j}", ks, crit, ks <= crit])
    L = v["ess_length"]
    ess, _, _ = diagnostics.ess_autocorrelation(rng.standard_normal(L))
    rows.append(["ess_iid_fraction", ess / L, 0.2, abs(ess / L - 1) <= 0.2])
    f = _write_csv(outdir / "calibrate.csv", ["quantity", "value", "tolerance", "pass"], rows)
    bad = sum(1 for r in rows if not r[3])
    summary = "\n".join(f"{r[0]}: {r[1]:.6g} ({'pass' if r[3] else 'FAIL'})" for r in rows) + "\n"
    return RunResult("calibrate", str(outdir), [f], bad, summary)


ISO_HEADER = ["check", "description", "m1", "m2", "m3", "bound", "margin", "holds"]


def _lab_target(family: str, dim: int) -> TargetDensity:
    if family == "logcosh":
        return make_separable([logcosh_piece(1.0)] * dim)
    P = 2.0 * np.eye(dim) + np.eye(dim, k=1) + np.eye(dim, k=-1)
    return make_gaussian(P)


def _random_halfspace(target: TargetDensity, rng) -> tuple[np.ndarray, float]:
    theta = rng.uniform(0, 2 * math.pi)
    v = np.array([math.cos(theta), math.sin(theta)])
    if target.is_gaussian:
        sd = math.sqrt(float(v @ np.linalg.inv(target.precision) @ v))
    else:
        sd = 1.0 / math.sqrt(target.mu)
    return v, float(v @ target.mode) + rng.uniform(0.0, 2.0) * sd


def run_verify_isoperimetry(cfg: ExperimentConfig, outdir: Path) -> RunResult:
    v = cfg.resolved()
    eps, fam = v["epsilon"], v["family"]
    rng = np.random.default_rng(v["seed"])
    rows, violations = [], 0
    if "cube" in v["checks"]:
        for k, dim in v["grids"]:
            rep = iso.cube_isoperimetry_sweep(k, dim, "uniform")
            violations += rep.violations
            rows.append(["cube_uniform", f"exhaustive {k}^{dim}: labelings={rep.labelings} "
                         f"axis_disjoint={rep.axis_disjoint} admissible={rep.admissible} "
                         f"skipped={rep.skipped} violations={rep.violations} "
                         f"min_ratio={rep.min_ratio:.6g}", None, None, None, None,
                         rep.min_margin, rep.ok])
            tg = _lab_target(fam, dim)
            side = bounds.delta(tg.kappa, tg.lipschitz, dim, eps)
            lo = tg.mode + 1.0 / math.sqrt(dim)
            g = iso.box_grid(lo, lo + side, k, tg)
            rep = iso.cube_isoperimetry_sweep(k, dim, "target", g.cell_measures)
            violations += rep.violations
            rows.append(["cube_target", f"exhaustive {k}^{dim} {fam} on delta-cube: "
                         f"admissible={rep.admissible} skipped={rep.skipped} "
                         f"violations={rep.violations} min_ratio={rep.min_ratio:.6g}",
                         None, None, None, None, rep.min_margin, rep.ok])
    if "facts" in v["checks"]:
        tg = _lab_target(fam, 2)
        side = bounds.delta(tg.kappa, tg.lipschitz, 2, eps)
        R = iso.k_radius_interval(tg, eps)[1]
        for j in range(v["cubes"]):
            cube = iso.random_cube_in_ball(tg, side, R, rng)
            f1 = iso.verify_fact_density_ratio(tg, cube, eps, rng_seed=int(rng.integers(2 ** 32)))
            lo_s = cube.lower + side * rng.uniform(0, 0.5, 2)
            hi_s = lo_s + side * rng.uniform(0.1, 0.5, 2)
            f2 = iso.verify_uniform_approx(tg, cube, lo_s, hi_s, eps)
            axis = int(rng.integers(2))
            a = cube.lower[1 - axis] + side * rng.uniform(0, 0.5)
            b = a + side * rng.uniform(0.1, 0.5)
            f3 = iso.verify_area_approx(tg, cube, axis, [a], [b],
                                        "lower" if rng.random() < 0.5 else "upper", eps)
            for f in (f1, f2, f3):
                violations += not f.holds
                rows.append([f"fact_{f.fact}", f"cube {j} at {cube.lower.tolist()}", None, None,
                             f.measured, f.upper, f.upper - f.measured if f.fact != "uniform_approx"
                             else min(f.measured - f.lower, f.upper - f.measured), f.holds])
        flagged = sum(not iso.verify_fact_density_ratio(
            tg, iso.random_cube_in_ball(tg, 10 * side, R, rng), eps).holds for _ in range(v["cubes"]))
        rows.append(["negative_control", f"10*delta cubes flagged: {flagged}/{v['cubes']}",
                     None, None, None, None, None, flagged > 0])
        violations += flagged == 0
    if "three_set" in v["checks"]:
        tg = _lab_target(fam, 2)
        lo, hi = iso.k_radius_interval(tg, eps)
        grid = iso.ball_grid(tg, 0.5 * (lo + hi), v["ball_cells"])
        for j in range(v["halfspaces"]):
            normal, offset = _random_halfspace(tg, rng)
            ref = iso.refine_partition(tg, normal, offset, grid)
            rep = iso.three_set_check(tg, grid, ref.partition, eps)
            bad = not (ref.axis_disjoint and rep.holds)
            violations += bad
            rows.append(["three_set_refined", f"halfspace {j} normal={normal.tolist()} offset={offset!r}",
                         rep.m1, rep.m2, rep.m3, rep.rhs, rep.slack, not bad])
        for j in range(v["random_partitions"]):
            part = iso.random_axis_disjoint_partition(grid, rng)
            rep = iso.three_set_check(tg, grid, part, eps)
            violations += not rep.holds
            rows.append(["three_set_random", f"random partition {j}", rep.m1, rep.m2, rep.m3,
                         rep.rhs, rep.slack, rep.holds])
    f = _write_csv(outdir / "isoperimetry.csv", ISO_HEADER, rows)
    summary = f"{len(rows)} checks, {violations} violations\n"
    return RunResult("verify_isoperimetry", str(outdir), [f], violations, summary)


# ---------------------------------------------------------------- dispatch and manifests

def run_experiment(cfg: ExperimentConfig, output_dir=None) -> RunResult:
    """Run any experiment kind and write its manifest."""
    outdir = _outdir(cfg, output_dir)
    if cfg.kind == "sweep":
        rows = run_sweep(cfg)
        files, bad, summary = emit_report(rows, outdir, cfg.plot_data)
        res = RunResult("sweep", str(outdir), files, bad, summary,
                        {"seeds": [r.seed for r in rows]})
    elif cfg.kind == "bounds":
        res = run_bounds(cfg, outdir)
    elif cfg.kind == "sample":
        res = run_sample(cfg, outdir)
    elif cfg.kind == "calibrate":
        res = run_calibrate(cfg, outdir)
    else:
        res = run_verify_isoperimetry(cfg, outdir)
    write_manifest(outdir, cfg, res)
    return res


def write_manifest(outdir, cfg: ExperimentConfig, result: RunResult) -> Path:
    outdir = Path(outdir)
    seeds = {"base_seed": cfg.seed}
    if "seeds" in result.extra:
        seeds["cell_seeds"] = result.extra["seeds"]
    manifest = {
        "tool": "gibbsmix",
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": cfg.resolved(),
        "defaults_filled": cfg.defaults_filled,
        "seeds": seeds,
        "rng": RNG_ALGORITHM,
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "scipy": scipy.__version__},
        "violations": result.violations,
        "files": {Path(f).name: _sha256(f) for f in result.files},
    }
    path = outdir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def rerun_manifest(manifest_path, output_dir) -> tuple[RunResult, dict]:
    """Re-execute a manifest's config into ``output_dir`` and compare CSV hashes.

    Returns the new result and ``{file: matches}`` for every CSV in the manifest.
    """
    manifest = json.loads(Path(manifest_path).read_text())
    data = dict(manifest["config"])
    data["output_dir"] = str(output_dir)
    cfg = resolve_config(data)
    res = run_experiment(cfg, output_dir)
    new = {Path(f).name: _sha256(f) for f in res.files}
    cmp = {name: new.get(name) == digest for name, digest in manifest["files"].items()
           if name.endswith(".csv")}
    return res, cmp
