"""Euler–Maruyama ensembles of the full three-timescale system

    dX = (1/ε) b(X, t/ε²) dt + σ(X, t/ε²) dW,   stopped when H(X) ≥ H*,

and the empirical functionals used to check the averaging principle.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUp, InsufficientPaths
from .flow import discretize_orbit, project_to_level
from .model import ModelSpec, drift, level_function
from .rng import NormalStreams, path_uniforms

# stream ids inside a path's key space
STREAM_NOISE = 0
STREAM_START = 1


@dataclass(frozen=True)
class PathConfig:
    """Time stepping for one path (or, with ``path_index`` ignored, an ensemble).

    dt = dt_factor * ε²; dt_factor must be at most 1/10 so the 2π ε² period
    of the coefficients is resolved.
    """

    epsilon: float
    t_end: float
    dt_factor: float = 1.0 / 50.0
    record_stride: int = 1
    seed: int = 0
    path_index: int = 0
    x0: Optional[tuple] = None
    blowup_radius: float = 1e3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.dt_factor <= 0.1:
            raise ValueError("dt must satisfy dt <= ε²/10 (dt_factor in (0, 0.1])")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def dt(self) -> float:
        return self.dt_factor * self.epsilon**2

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


@dataclass
class PathResult:
    times: np.ndarray
    states: np.ndarray
    k_values: np.ndarray
    stopped: bool
    tau: Optional[float]


@dataclass
class Estimate:
    value: float
    se: float

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.value - target) <= n_se * self.se

    def as_dict(self):
        return {"value": self.value, "se": self.se}


def estimate_of(samples) -> Estimate:
    s = np.asarray(samples, dtype=float)
    if s.size < 2:
        return Estimate(float(s.mean()) if s.size else float("nan"), float("nan"))
    return Estimate(float(s.mean()), float(s.std(ddof=1) / math.sqrt(s.size)))


@dataclass
class EnsembleStats:
    n_paths: int
    estimates: dict = field(default_factory=dict)

    def as_dict(self):
        return {"n_paths": self.n_paths, **{k: v.as_dict() for k, v in self.estimates.items()}}


def default_threads() -> int:
    env = os.environ.get("FLATHAM_THREADS")
    if env:
        return max(1, int(env))
    return 1


# ---------------------------------------------------------------------------
# engine


def _sigma_dw(s, z):
    # explicit 2x2 product keeps every path's arithmetic independent of the batch
    return np.stack([s[..., 0, 0] * z[:, 0] + s[..., 0, 1] * z[:, 1],
                     s[..., 1, 0] * z[:, 0] + s[..., 1, 1] * z[:, 1]], axis=-1)


def _run_chunk(spec, x0, idx, seed, epsilon, dt, n_steps, kill_below, band, deltas,
               record_stride, blowup_radius):
    n = len(idx)
    x = np.array(x0, dtype=float)
    k_star = spec.k_star
    K = level_function(spec, x)[0]
    alive = K < k_star
    stopped = ~alive  # started outside I
    tau = np.where(stopped, 0.0, np.nan)
    killed = np.zeros(n, dtype=bool)
    exit_side = np.zeros(n, dtype=np.int8)  # -1 inner, +1 outer
    exit_time = np.full(n, np.nan)
    occ = np.zeros((n, len(deltas)))
    deltas = np.asarray(deltas, dtype=float)
    if band is not None:
        out = alive & (np.abs(K) >= band)
        exit_side[out] = np.sign(K[out]).astype(np.int8)
        exit_time[out] = 0.0
        alive &= ~out
    trace = [x.copy()] if record_stride else None
    streams = NormalStreams(seed, idx, 2, STREAM_NOISE)
    sdt = math.sqrt(dt)
    inv_eps = 1.0 / epsilon
    for step in range(n_steps):
        if not alive.any() and trace is None:
            break
        z = streams.next()
        if not alive.any():
            if trace is not None and (step + 1) % record_stride == 0:
                trace.append(x.copy())
            continue
        t_fast = (step * dt) / epsilon**2
        xa = x[alive]
        b = drift(spec, xa, t_fast)
        s = spec.sigma(xa, t_fast)
        xn = xa + (inv_eps * dt) * b + sdt * _sigma_dw(s, z[alive])
        if not np.all(np.isfinite(xn)) or np.max(np.abs(xn), initial=0.0) > blowup_radius:
            raise BlowUp(f"|X| exceeded {blowup_radius} at step {step}")
        Kn = level_function(spec, xn)[0]
        if deltas.size:
            occ[alive] += dt * (np.abs(K[alive])[:, None] <= deltas[None, :])
        x[alive] = xn
        K[alive] = Kn
        t_new = (step + 1) * dt
        ai = np.flatnonzero(alive)
        hit = Kn >= k_star
        stopped[ai[hit]] = True
        tau[ai[hit]] = t_new
        done = hit.copy()
        if kill_below is not None:
            low = (~hit) & (Kn <= kill_below)
            killed[ai[low]] = True
            done |= low
        if band is not None:
            outb = (~done) & (np.abs(Kn) >= band)
            exit_side[ai[outb]] = np.sign(Kn[outb]).astype(np.int8)
            exit_time[ai[outb]] = t_new
            done |= outb
        alive[ai[done]] = False
        if trace is not None and (step + 1) % record_stride == 0:
            trace.append(x.copy())
    return {
        "x": x, "K": K, "stopped": stopped, "tau": tau, "killed": killed,
        "exit_side": exit_side, "exit_time": exit_time, "occupation": occ,
        "trace": None if trace is None else np.stack(trace, axis=1),
    }


def run_ensemble(spec: ModelSpec, x0, cfg: PathConfig, path_indices=None, *, kill_below=None,
                 band=None, deltas=(), record_stride: int = 0, threads: Optional[int] = None):
    """Simulate one path per row of ``x0``.

    Paths stop at τ (H ≥ H*), optionally when K ≤ ``kill_below`` or when
    |K| ≥ ``band``; stopped paths stay frozen.  ``deltas`` accumulates the
    time spent in {|K| ≤ δ} before stopping.  Results are assembled in
    path-index order and do not depend on ``threads``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = len(x0)
    idx = np.arange(n) if path_indices is None else np.asarray(path_indices, dtype=np.int64)
    threads = default_threads() if threads is None else max(1, int(threads))
    n_chunks = min(n, threads)
    bounds = np.linspace(0, n, n_chunks + 1).astype(int)
    args = (cfg.seed, cfg.epsilon, cfg.dt, cfg.n_steps, kill_below, band, tuple(deltas),
            record_stride, cfg.blowup_radius)
    jobs = [(x0[a:b], idx[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    run = lambda j: _run_chunk(spec, j[0], j[1], *args)
    if len(jobs) > 1:
        with ThreadPoolExecutor(len(jobs)) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    out = {}
    for key in parts[0]:
        if parts[0][key] is None:
            out[key] = None
        else:
            out[key] = np.concatenate([p[key] for p in parts])
    return out


def simulate_full_path(spec: ModelSpec, cfg: PathConfig, x0=None) -> PathResult:
    """One Euler–Maruyama path for (seed, path_index), thinned by record_stride."""
    start = x0 if x0 is not None else cfg.x0
    if start is None:
        raise ValueError("an initial point is required (argument x0 or cfg.x0)")
    res = _run_chunk(spec, np.asarray(start, dtype=float)[None, :], np.array([cfg.path_index]),
                     cfg.seed, cfg.epsilon, cfg.dt, cfg.n_steps, None, None, (),
                     cfg.record_stride, cfg.blowup_radius)
    states = res["trace"][0]
    times = np.arange(len(states)) * cfg.dt * cfg.record_stride
    times[-1] = min(times[-1], cfg.n_steps * cfg.dt)
    stopped = bool(res["stopped"][0])
    tau = float(res["tau"][0]) if stopped else None
    return PathResult(times, states, level_function(spec, states)[0], stopped, tau)


# ---------------------------------------------------------------------------
# starting laws


def uniform_on_level(spec: ModelSpec, h: float, seed: int, path_indices, n_points: int = 512):
    """Points on K⁻¹(h), uniform in flow time, one per path index."""
    orbit = discretize_orbit(spec, h, n_points)
    u = path_uniforms(seed, path_indices, STREAM_START)[:, 0]
    return project_to_level(spec, orbit.at_fraction(u), h)


# ---------------------------------------------------------------------------
# functionals


def estimate_drift_qv(spec: ModelSpec, h0: float, delta_t: float, n_paths: int, epsilon: float,
                      seed: int = 0, dt_factor: float = 1.0 / 50.0, threads=None):
    """Drift and quadratic-variation rates of K over one window of length Δ.

    Returns (drift, qv) as Estimates of E[ΔK]/Δ and E[(ΔK)²]/Δ.
    """
    if n_paths < 100:
        raise InsufficientPaths(f"need at least 100 paths, got {n_paths}")
    if not 0 < h0 < spec.k_star:
        raise ValueError("h0 must lie in (0, K*)")
    idx = np.arange(n_paths)
    x0 = uniform_on_level(spec, h0, seed, idx)
    cfg = PathConfig(epsilon=epsilon, t_end=delta_t, dt_factor=dt_factor, seed=seed)
    res = run_ensemble(spec, x0, cfg, idx, threads=threads)
    dk = res["K"] - h0
    return estimate_of(dk / delta_t), estimate_of(dk * dk / delta_t)


def residence_functional(spec: ModelSpec, x0, cfg: PathConfig, deltas, threads=None):
    """E[(1/δ)∫₀^{t∧τ} 1{|K(X_u)| ≤ δ} du] for each δ, t = cfg.t_end.

    Also returns the per-path samples so paired comparisons across δ are
    possible.
    """
    deltas = tuple(float(d) for d in deltas)
    if any(d <= 0 or d > spec.collar_a for d in deltas):
        raise ValueError("deltas must lie in (0, collar_a]")
    res = run_ensemble(spec, x0, cfg, deltas=deltas, threads=threads)
    samples = res["occupation"] / np.array(deltas)[None, :]
    return {d: estimate_of(samples[:, i]) for i, d in enumerate(deltas)}, samples


def exit_statistics(spec: ModelSpec, x0, cfg: PathConfig, band: float, threads=None):
    """Which side of [−band, band] K leaves through first.

    Returns (p_inner, p_outer, undecided fraction) as Estimates of the path
    fractions; p_inner + p_outer + undecided = 1.
    """
    if not 0 < band <= spec.collar_a:
        raise ValueError("band must lie in (0, collar_a]")
    res = run_ensemble(spec, x0, cfg, band=band, threads=threads)
    side = res["exit_side"]
    return (estimate_of(side == -1), estimate_of(side == 1), estimate_of(side == 0)), res


def killed_level_law(spec: ModelSpec, x0, cfg: PathConfig, kill_below: float, threads=None):
    """K(X_{t∧τ∧τ_low}) with τ_low the first time K ≤ kill_below; frozen values."""
    res = run_ensemble(spec, x0, cfg, kill_below=kill_below, threads=threads)
    K = res["K"].copy()
    K[res["stopped"]] = spec.k_star
    K[res["killed"]] = kill_below
    return K
