"""Named experiments: each returns results, verdicts and CSV artifacts, and
``run_experiment`` wraps them into a versioned JSON manifest."""
from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import __version__
from .averaging import psi, tabulate_reduced
from .config import ExperimentConfig, spec_document, spec_hash
from .corrector import CorrectorProblem, bump, corrector_residual, solve_corrector
from .errors import ConfigError
from .flow import beta_level
from .fullsim import (PathConfig, estimate_drift_qv, estimate_of, exit_statistics, killed_level_law,
                      residence_functional, run_ensemble, uniform_on_level)
from .model import ModelSpec, _sample_box, level_function, mean_drift, drift, time_average
from .reduced import (GluingRule, StratifiedState, Stratum, band_exit_prediction, default_gluing_rule,
                      simulate_edge, simulate_stratified_ensemble)

SCHEMA = 1
WALL_KEYS = ("wall_time_s",)


def _fmt(x) -> str:
    # shortest string that round-trips exactly
    return repr(float(x))


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, (int, str)) else _fmt(v) for v in r])


# ---------------------------------------------------------------------------


def sample_region(spec: ModelSpec, grid: int = 32):
    """Points of a grid × grid box that lie in I = {H < H*}."""
    pts = _sample_box(spec, spec.k_star, grid)
    return pts[level_function(spec, pts)[0] < spec.k_star]


def model_check(spec: ModelSpec, p: dict, seed: int, threads: int):
    pts = sample_region(spec, p["grid"])
    mb = time_average(lambda x, t: drift(spec, x, t), pts, p["nodes"])
    err_b = float(np.max(np.abs(mb - mean_drift(spec, pts))))
    err_psi = float(np.max(np.abs(time_average(lambda x, t: psi(spec, x, t), pts, p["nodes"]))))
    results = {"n_points": int(len(pts)), "max_mean_drift_error": err_b, "max_psi_mean": err_psi}
    verdicts = {"mean_drift": err_b <= 1e-10, "psi_zero_mean": err_psi <= 1e-10}
    return results, verdicts, {}


def coeffs_tabulate(spec: ModelSpec, p: dict, seed: int, threads: int):
    k = spec.k_star
    m = int(round((p["h_stop"] - p["h_start"]) / p["h_step"])) + 1
    grid = p["h_start"] + p["h_step"] * np.arange(m)
    grid = grid[grid <= k * (1 + 1e-12)]
    table = tabulate_reduced(spec, grid, p["n_points"], p["nodes"], p["interpolation"], threads)
    rows = table.rows()
    results = {"rows": len(rows), "h": table.h_grid.tolist(), "b_bar": table.b_bar.tolist(),
               "sigma2_bar": table.sigma2_bar.tolist()}
    verdicts = {"sigma2_positive": bool(np.all(table.sigma2_bar > 0))}
    return results, verdicts, {"coeffs.csv": (("h", "b_bar", "sigma2_bar"), rows)}


def simulate_full(spec: ModelSpec, p: dict, seed: int, threads: int):
    n = p["n_paths"]
    idx = np.arange(n)
    x0 = uniform_on_level(spec, p["h0"], seed, idx)
    cfg = PathConfig(epsilon=p["epsilon"], t_end=p["t_end"], dt_factor=p["dt_factor"], seed=seed)
    rec = p["trace_stride"] if p["trace_paths"] > 0 else 0
    res = run_ensemble(spec, x0, cfg, idx, record_stride=rec, threads=threads)
    d, q = estimate_drift_qv(spec, p["h0"], p["delta"], n, p["epsilon"], seed, p["dt_factor"], threads)
    results = {
        "n_paths": n, "dt": cfg.dt,
        "mean_K_end": estimate_of(res["K"]).as_dict(),
        "exit_fraction": estimate_of(res["stopped"]).as_dict(),
        "drift_rate": d.as_dict(), "qv_rate": q.as_dict(),
    }
    artifacts = {}
    if rec:
        rows = []
        tr = res["trace"]
        for i in range(min(p["trace_paths"], n)):
            for j in range(tr.shape[1]):
                x = tr[i, j]
                rows.append((i, _fmt(j * rec * cfg.dt), x[0], x[1], float(level_function(spec, x)[0])))
        artifacts["trace.csv"] = (("path", "t", "x1", "x2", "K"), rows)
    return results, {}, artifacts


def simulate_reduced(spec: ModelSpec, p: dict, seed: int, threads: int):
    table = tabulate_reduced(spec, threads=threads)
    rule = default_gluing_rule(spec)
    if p["excursion_scale"] > 0:
        rule = GluingRule(rule.p_edge, p["excursion_scale"])
    if p["p_edge"] >= 0:
        rule = GluingRule(p["p_edge"], rule.excursion_scale)
    start = {"edge": lambda: StratifiedState.edge(p["h0"]), "vertex": StratifiedState.vertex,
             "interior": lambda: StratifiedState.interior(p["x0"])}
    if p["start"] not in start:
        raise ConfigError("params.start", "expected 'edge', 'vertex' or 'interior'")
    ens = simulate_stratified_ensemble(spec, table, rule, start[p["start"]](), p["t_end"], p["dt"],
                                       seed, p["n_paths"])
    frac = {s.name.lower(): estimate_of(ens.stratum == s).as_dict() for s in Stratum}
    results = {
        "n_paths": p["n_paths"], "p_edge": rule.p_edge, "excursion_scale": rule.excursion_scale,
        "final_stratum": frac,
        "occupation_interior": estimate_of(ens.occupation[:, 0]).as_dict(),
        "occupation_edge": estimate_of(ens.occupation[:, 1]).as_dict(),
        "vertex_visits": estimate_of(ens.vertex_visits).as_dict(),
    }
    return results, {}, {}


def corrector_solve(spec: ModelSpec, p: dict, seed: int, threads: int):
    beta0 = p["beta0"] if p["beta0"] > 0 else beta_level(spec, 0.0)
    modes = {}
    for entry in p["modes"]:
        if len(entry) != 3:
            raise ConfigError("params.modes", "entries are [k, re, im]")
        modes[int(entry[0])] = complex(entry[1], entry[2])
    prob = CorrectorProblem(n=spec.n, beta0=beta0, rhs_modes=modes, omega=bump(*p["bump"]),
                            s_max=p["s_max"], n_s=p["n_s"], n_theta=p["n_theta"])
    sol = solve_corrector(prob)
    l2, neu, per = corrector_residual(prob, sol)
    fine = prob.refined()
    fsol = solve_corrector(fine)
    l2f, neuf, perf = corrector_residual(fine, fsol)
    peak = float(np.max(np.abs(fsol.B)))
    tail = float(np.max(np.abs(fsol.B[:, -1])))
    results = {
        "beta0": beta0, "l2": l2, "l2_refined": l2f, "reduction": l2 / l2f if l2f > 0 else math.inf,
        "neumann": neuf, "periodicity": perf, "max_abs_B": peak, "tail_ratio": tail / peak if peak else 0.0,
        "decay_constant": fsol.decay_constant,
    }
    verdicts = {
        "residual": l2f <= 1e-4 and (l2f == 0 or l2 / l2f >= 3.0),
        "neumann": neuf <= 1e-6,
        "decay": tail <= 1e-6 * peak,
    }
    rows = [(_fmt(th), *row) for th, row in zip(sol.theta, sol.B)]
    header = ("theta",) + tuple(_fmt(s) for s in sol.s)
    return results, verdicts, {"corrector_B.csv": (header, rows)}


def verify_averaging(spec: ModelSpec, p: dict, seed: int, threads: int):
    results, verdicts = {}, {}
    checks = set(p["checks"])
    unknown = checks - {"drift_qv", "weak"}
    if unknown:
        raise ConfigError("params.checks", f"unknown checks {sorted(unknown)}")
    table = tabulate_reduced(spec, threads=threads)
    if "drift_qv" in checks:
        d, q = estimate_drift_qv(spec, p["h0"], p["delta"], p["n_paths"], p["epsilon"], seed,
                                 p["dt_factor"], threads)
        b0, s0 = float(table.drift(p["h0"])), float(table.diffusion(p["h0"]))
        results.update(drift_rate=d.as_dict(), qv_rate=q.as_dict(), b_bar=b0, sigma2_bar=s0)
        verdicts["drift_within_3se"] = d.within(b0)
        verdicts["qv_within_3se"] = q.within(s0)
    if "weak" in checks:
        red = simulate_edge(table, p["h0"], p["ks_t"], p["ks_dt"], seed, p["ks_reduced_paths"],
                            lower=p["ks_kill"])
        idx = np.arange(p["ks_paths"])
        x0 = uniform_on_level(spec, p["h0"], seed, idx)
        dist = {}
        for eps in p["ks_epsilons"]:
            cfg = PathConfig(epsilon=eps, t_end=p["ks_t"], dt_factor=p["dt_factor"], seed=seed)
            K = killed_level_law(spec, x0, cfg, p["ks_kill"], threads)
            dist[eps] = float(ks_2samp(K, red.h).statistic)
        eps_sorted = sorted(dist, reverse=True)
        first, last = dist[eps_sorted[0]], dist[eps_sorted[-1]]
        reduction = 1.0 - last / first if first > 0 else 0.0
        results["ks_distance"] = {_fmt(e): v for e, v in dist.items()}
        results["ks_reduction"] = reduction
        verdicts["ks_decreases"] = reduction >= p["ks_min_reduction"]
    return results, verdicts, {}


def verify_residence(spec: ModelSpec, p: dict, seed: int, threads: int):
    n = p["n_paths"]
    deltas = sorted(p["deltas"], reverse=True)
    x0 = uniform_on_level(spec, p["start_level"], seed, np.arange(n))
    cfg = PathConfig(epsilon=p["epsilon"], t_end=p["t"], dt_factor=p["dt_factor"], seed=seed)
    est, samples = residence_functional(spec, x0, cfg, deltas, threads)
    vals = [est[d].value for d in deltas]
    ratio = max(vals) / min(vals) if min(vals) > 0 else math.inf
    # paired differences between successive δ on the same paths
    growth = []
    for i in range(len(deltas) - 1):
        diff = estimate_of(samples[:, i + 1] - samples[:, i])
        growth.append({"from": deltas[i], "to": deltas[i + 1], **diff.as_dict()})
    no_growth = all(g["value"] <= 3 * g["se"] for g in growth)
    slope = float(np.polyfit(np.log(deltas), np.log(vals), 1)[0]) if len(deltas) > 1 else 0.0
    results = {
        "values": {_fmt(d): est[d].as_dict() for d in deltas},
        "max_min_ratio": ratio, "paired_growth": growth,
        "loglog_slope": slope,  # −1 would mean sticking at the vertex
    }
    verdicts = {"within_factor_2": ratio <= 2.0, "no_growth_as_delta_shrinks": no_growth}
    return results, verdicts, {}


def verify_gluing(spec: ModelSpec, p: dict, seed: int, threads: int):
    n = p["n_paths"]
    x0 = uniform_on_level(spec, 0.0, seed, np.arange(n))
    cfg = PathConfig(epsilon=p["epsilon"], t_end=p["t_end"], dt_factor=p["dt_factor"], seed=seed)
    (pin, pout, pund), _ = exit_statistics(spec, x0, cfg, p["band"], threads)
    rule = default_gluing_rule(spec)
    pred = band_exit_prediction(spec, p["band"], rule)
    table = tabulate_reduced(spec, threads=threads)
    ens = simulate_stratified_ensemble(spec, table, rule, StratifiedState.vertex(), p["t_end"],
                                       p["reduced_dt"], seed, p["reduced_paths"], band=p["band"])
    rin = estimate_of(ens.band_exit == -1)
    rund = estimate_of(ens.band_exit == 0)
    comb = math.hypot(pin.se, rin.se)
    results = {
        "p_edge": rule.p_edge, "excursion_scale": rule.excursion_scale,
        "full_p_inner": pin.as_dict(), "full_p_outer": pout.as_dict(), "full_undecided": pund.value,
        "prediction_p_inner": pred, "symmetric_value": 0.5,
        "full_vs_symmetric_se": (pin.value - 0.5) / pin.se if pin.se > 0 else None,
        "reduced_p_inner": rin.as_dict(), "reduced_undecided": rund.value,
        "mean_vertex_visits": float(ens.vertex_visits.mean()),
    }
    verdicts = {
        "full_matches_prediction": pin.within(pred),
        "reduced_matches_full": abs(rin.value - pin.value) <= 3 * comb,
        "all_paths_exited": pund.value == 0.0 and rund.value == 0.0,
    }
    return results, verdicts, {}


RUNNERS = {
    "model-check": model_check,
    "coeffs-tabulate": coeffs_tabulate,
    "simulate-full": simulate_full,
    "simulate-reduced": simulate_reduced,
    "corrector-solve": corrector_solve,
    "verify-averaging": verify_averaging,
    "verify-residence": verify_residence,
    "verify-gluing": verify_gluing,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


def run_experiment(config: ExperimentConfig, write: bool = True) -> dict:
    """Run one experiment, write ``manifest.json`` (and CSVs) to output_dir."""
    t0 = time.perf_counter()
    results, verdicts, artifacts = RUNNERS[config.experiment](config.model, config.params, config.seed,
                                                             config.threads)
    manifest = _jsonable({
        "schema": SCHEMA,
        "experiment": config.experiment,
        "code_version": __version__,
        "spec_hash": spec_hash(config.model),
        "model": spec_document(config.model),
        "config": config.echo(),
        "seed": config.seed,
        "results": results,
        "verdicts": verdicts,
        "passed": all(verdicts.values()),
        "artifacts": sorted(artifacts),
        "wall_time_s": time.perf_counter() - t0,
    })
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in artifacts.items():
            _write_csv(out / name, header, rows)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def strip_wall_time(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k not in WALL_KEYS}
