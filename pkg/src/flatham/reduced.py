"""The limiting process on the stratified space: interior disc, vertex, edge,
absorbing endpoint.  Also the explicit edge boundary-value solution."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtr

from .averaging import marginal_coefficients
from .errors import EllipticityViolation, TableGap
from .flow import Orbit, discretize_orbit, project_to_level
from .model import ModelSpec, level_function, mean_gamma
from .rng import NormalStreams


class Stratum(enum.IntEnum):
    INTERIOR = 0
    VERTEX = 1
    EDGE = 2
    ABSORBED = 3


@dataclass(frozen=True)
class StratifiedState:
    stratum: Stratum
    point: Optional[tuple] = None
    h: Optional[float] = None

    @classmethod
    def interior(cls, point):
        return cls(Stratum.INTERIOR, point=tuple(float(v) for v in point))

    @classmethod
    def vertex(cls):
        return cls(Stratum.VERTEX)

    @classmethod
    def edge(cls, h):
        return cls(Stratum.EDGE, h=float(h))

    @classmethod
    def absorbed(cls):
        return cls(Stratum.ABSORBED)


@dataclass(frozen=True)
class GluingRule:
    """Vertex exit rule: an excursion enters the edge with probability p_edge,
    otherwise the disc at K = −excursion_scale."""

    p_edge: float = 0.5
    excursion_scale: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.p_edge <= 1.0:
            raise ValueError("p_edge must lie in [0, 1]")
        if not self.excursion_scale > 0:
            raise ValueError("excursion_scale must be positive")


def vertex_tolerance(k_star: float) -> float:
    return 1e-4 * k_star


def default_gluing_rule(spec: ModelSpec, probe: Optional[float] = None) -> GluingRule:
    """p_edge from flux matching a_in F'(0−) = a_out F'(0+) of the K-marginal.

    a(h) is the orbit-averaged diffusivity of K, evaluated on either side of
    the vertex with the smooth extension of K inside the disc.  The scale
    function then has s'(0+)/s'(0−) = a_in/a_out, so the chance of leaving a
    small symmetric band on the edge side is a_out/(a_in + a_out).
    """
    tol = vertex_tolerance(spec.k_star)
    probe = 10 * tol if probe is None else probe
    a_in = marginal_coefficients(spec, -probe)[1]
    a_out = marginal_coefficients(spec, probe)[1]
    p = a_out / (a_in + a_out)
    return GluingRule(p_edge=float(p), excursion_scale=10 * tol)


# ---------------------------------------------------------------------------
# natural scale and the explicit edge solution


def _coefficient_check(table, k_star, m: int = 257):
    hs = np.linspace(0.0, k_star, m)
    s2 = np.asarray(table.diffusion(hs), dtype=float)
    if np.any(~np.isfinite(s2)) or np.any(s2 <= 0):
        raise EllipticityViolation("σ̄² must be positive on [0, K*]")


def natural_scale(table, h: float) -> float:
    """I(h) = exp(2 ∫₀ʰ b̄/σ̄² ds)."""
    k_star = table.k_star
    if not -1e-12 <= h <= k_star * (1 + 1e-12):
        raise TableGap(f"h = {h} outside [0, K*] = [0, {k_star}]")
    if h <= 0:
        return 1.0
    f = lambda s: 2.0 * float(table.drift(s)) / float(table.diffusion(s))
    val, _ = quad(f, 0.0, h, epsabs=1e-13, epsrel=1e-13, limit=200)
    return math.exp(val)


class EdgeSolution:
    """u(h) = r1 + (r2 − r1) J/J* + 2P − 2 (J/J*) P*, with

    I = e^L, L' = 2b̄/σ̄², J' = 1/I, Q' = g I/σ̄², P' = Q/I (all zero at 0).
    """

    def __init__(self, sol, r1, r2, k_star):
        self._sol = sol
        self.r1, self.r2, self.k_star = float(r1), float(r2), float(k_star)
        L, J, Q, P = sol.y[:, -1]
        self.J_star, self.P_star = float(J), float(P)
        self.C = (self.r2 - self.r1 - 2 * self.P_star) / self.J_star

    def _state(self, h):
        h = np.clip(np.asarray(h, dtype=float), 0.0, self.k_star)
        return self._sol.sol(h)

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        L, J, Q, P = self._state(h)
        u = self.r1 + (self.r2 - self.r1) * J / self.J_star + 2 * P - 2 * (J / self.J_star) * self.P_star
        # pin the endpoints exactly
        u = np.where(h <= 0.0, self.r1, np.where(h >= self.k_star, self.r2, u))
        return u if u.ndim else float(u)

    def derivative(self, h):
        L, J, Q, P = self._state(h)
        return (self.C + 2 * Q) * np.exp(-L)


def solve_edge_bvp(table, g, r1: float, r2: float) -> EdgeSolution:
    """Solve b̄u' + ½σ̄²u'' = g on (0, K*), u(0) = r1, u(K*) = r2."""
    k_star = table.k_star
    _coefficient_check(table, k_star)

    def rhs(h, y):
        b = float(table.drift(h))
        s2 = float(table.diffusion(h))
        L, J, Q, P = y
        eL = math.exp(L)
        return [2 * b / s2, 1.0 / eL, float(g(h)) * eL / s2, Q / eL]

    sol = solve_ivp(rhs, (0.0, k_star), [0.0, 0.0, 0.0, 0.0], method="DOP853",
                    rtol=1e-13, atol=1e-15, dense_output=True)
    if not sol.success:
        raise RuntimeError(sol.message)
    return EdgeSolution(sol, r1, r2, k_star)


# ---------------------------------------------------------------------------
# 1-D proxy across the vertex


def proxy_coefficients(spec: ModelSpec, band: float, m: int = 41):
    """(levels, b, a) of the K-marginal on [−band, band]; negative levels use
    the smooth extension of K and the same averaged integrands."""
    levels = np.linspace(-band, band, m)
    vals = np.array([marginal_coefficients(spec, float(h)) for h in levels])
    return levels, vals[:, 0], vals[:, 1]


def band_exit_prediction(spec: ModelSpec, band: float, rule: Optional[GluingRule] = None) -> float:
    """P(K leaves [−band, band] through −band), started at the vertex, from
    the natural scale of the 1-D proxy with the gluing jump at 0."""
    levels, b, a = proxy_coefficients(spec, band)
    ratio = 2 * b / a
    f = PchipInterpolator(levels, ratio)
    F = f.antiderivative()
    sprime = lambda h: math.exp(-(F(h) - F(0.0)))
    rule = default_gluing_rule(spec) if rule is None else rule
    # s'(0+)/s'(0−) = p_edge/(1 − p_edge) reproduces the flux condition
    jump = rule.p_edge / (1.0 - rule.p_edge)
    inner = quad(sprime, -band, 0.0, epsabs=1e-14, epsrel=1e-12)[0]
    outer = quad(sprime, 0.0, band, epsabs=1e-14, epsrel=1e-12)[0] / jump
    return outer / (inner + outer)


# ---------------------------------------------------------------------------
# simulation


def _bridge_crossing(d0, d1, var_dt):
    """Probability a Brownian bridge with endpoints at distances d0, d1 > 0
    from a barrier touches it."""
    with np.errstate(over="ignore", invalid="ignore"):
        p = np.exp(-2.0 * d0 * d1 / var_dt)
    return np.where((d0 > 0) & (d1 > 0), p, 1.0)


@dataclass
class EdgeEnsemble:
    h: np.ndarray          # final (frozen) edge coordinate
    status: np.ndarray     # Stratum per path: EDGE (still running), VERTEX, ABSORBED
    hit_time: np.ndarray   # time of the vertex/absorption event, nan if none
    qv: np.ndarray         # Σ (Δh)² up to the event
    trace: Optional[np.ndarray] = None


def simulate_edge(table, h0, t_end: float, dt: float, seed: int, n_paths: int = 1,
                  lower: Optional[float] = None, bridge: bool = True, record_stride: int = 0,
                  path_indices=None) -> EdgeEnsemble:
    """Euler–Maruyama for dh = b̄(h)dt + σ̄(h)dW.

    Paths stop at VERTEX when h ≤ ``lower`` (default vertex_tol) and at
    ABSORBED when h ≥ K*.  With ``bridge`` the crossing of either barrier
    between grid times is also detected through the Brownian-bridge
    probability, removing the O(√dt) bias of discrete monitoring.
    """
    k_star = table.k_star
    lower = vertex_tolerance(k_star) if lower is None else float(lower)
    idx = np.arange(n_paths) if path_indices is None else np.asarray(path_indices)
    h = np.broadcast_to(np.asarray(h0, dtype=float), (len(idx),)).copy()
    if np.any(h <= lower) or np.any(h >= k_star):
        raise ValueError("h0 must lie strictly between the vertex tolerance and K*")
    status = np.full(len(idx), int(Stratum.EDGE))
    hit_time = np.full(len(idx), np.nan)
    qv = np.zeros(len(idx))
    streams = NormalStreams(seed, idx, 2)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    sdt = math.sqrt(dt)
    trace = [h.copy()] if record_stride else None
    for step in range(n_steps):
        alive = status == Stratum.EDGE
        if not alive.any() and trace is None:
            break
        z = streams.next()
        if alive.any():
            ha = h[alive]
            s2 = np.asarray(table.diffusion(ha), dtype=float)
            hn = ha + np.asarray(table.drift(ha), dtype=float) * dt + np.sqrt(s2) * sdt * z[alive, 0]
            ai = np.flatnonzero(alive)
            t_new = (step + 1) * dt
            down = hn <= lower
            up = (~down) & (hn >= k_star)
            if bridge:
                u = ndtr(z[alive, 1])
                p_lo = _bridge_crossing(ha - lower, hn - lower, s2 * dt)
                p_hi = _bridge_crossing(k_star - ha, k_star - hn, s2 * dt)
                rest = ~(down | up)
                down |= rest & (u < p_lo)
                up |= rest & (u >= p_lo) & (u < p_lo + p_hi)
            hn = np.where(down, lower, np.where(up, k_star, hn))
            qv[ai] += (hn - ha) ** 2
            h[ai] = hn
            status[ai[down]] = int(Stratum.VERTEX)
            status[ai[up]] = int(Stratum.ABSORBED)
            hit_time[ai[down | up]] = t_new
        if trace is not None and (step + 1) % record_stride == 0:
            trace.append(h.copy())
    return EdgeEnsemble(h, status, hit_time, qv, None if trace is None else np.stack(trace, axis=1))


class _MeanGamma:
    """Cholesky factor of Mγ(x); computed once when σ does not depend on x."""

    def __init__(self, spec: ModelSpec, nodes: int = 8):
        self.spec = spec
        self.nodes = nodes
        self.const = None
        if spec.sigma.kind in ("identity", "constant", "zero"):
            self.const = self._factor(mean_gamma(spec, np.zeros((1, 2)), nodes))[0]

    @staticmethod
    def _factor(G):
        # explicit 2x2 Cholesky (handles the degenerate zero field)
        l11 = np.sqrt(np.maximum(G[..., 0, 0], 0.0))
        l21 = np.where(l11 > 0, G[..., 1, 0] / np.where(l11 > 0, l11, 1.0), 0.0)
        l22 = np.sqrt(np.maximum(G[..., 1, 1] - l21**2, 0.0))
        L = np.zeros(G.shape)
        L[..., 0, 0] = l11
        L[..., 1, 0] = l21
        L[..., 1, 1] = l22
        return L

    def __call__(self, x):
        if self.const is not None:
            return np.broadcast_to(self.const, x.shape[:-1] + (2, 2))
        return self._factor(mean_gamma(self.spec, x, self.nodes))


def _interior_step(chol, x, z, sdt):
    L = chol(x)
    return x + sdt * np.stack([L[..., 0, 0] * z[:, 0],
                               L[..., 1, 0] * z[:, 0] + L[..., 1, 1] * z[:, 1]], axis=-1)


def simulate_interior(spec: ModelSpec, x0, t_end: float, dt: float, seed: int, n_paths: int = 1,
                      record_stride: int = 0, path_indices=None):
    """Driftless diffusion with covariance Mγ on the disc, flagged (and frozen)
    when K ≥ −vertex_tol.  Returns (x_final, hit_vertex, hit_time, trace)."""
    tol = vertex_tolerance(spec.k_star)
    idx = np.arange(n_paths) if path_indices is None else np.asarray(path_indices)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (len(idx), 2)).copy()
    if np.any(level_function(spec, x)[0] >= -tol):
        raise ValueError("interior start must satisfy K < −vertex_tol")
    chol = _MeanGamma(spec)
    hit = np.zeros(len(idx), dtype=bool)
    hit_time = np.full(len(idx), np.nan)
    streams = NormalStreams(seed, idx, 2)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    sdt = math.sqrt(dt)
    trace = [x.copy()] if record_stride else None
    for step in range(n_steps):
        a = ~hit
        if not a.any() and trace is None:
            break
        z = streams.next()
        if a.any():
            xn = _interior_step(chol, x[a], z[a], sdt)
            ai = np.flatnonzero(a)
            x[ai] = xn
            v = level_function(spec, xn)[0] >= -tol
            hit[ai[v]] = True
            hit_time[ai[v]] = (step + 1) * dt
        if trace is not None and (step + 1) % record_stride == 0:
            trace.append(x.copy())
    return x, hit, hit_time, None if trace is None else np.stack(trace, axis=1)


def reentry_orbit(spec: ModelSpec, rule: GluingRule, n_points: int = 512) -> Orbit:
    return discretize_orbit(spec, -rule.excursion_scale, n_points)


def vertex_step(rule: GluingRule, orbit: Orbit, seed=None, *, spec: Optional[ModelSpec] = None) -> StratifiedState:
    """One exit from the vertex: Edge(δ_v) with probability p_edge, otherwise
    a point of K⁻¹(−δ_v) (``orbit``) uniform in flow time."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u_edge, u_pos = rng.random(2)
    if u_edge < rule.p_edge:
        return StratifiedState.edge(rule.excursion_scale)
    p = orbit.at_fraction(u_pos)
    if spec is not None:
        p = project_to_level(spec, p, orbit.h)
    return StratifiedState.interior(p)


@dataclass
class StratifiedEnsemble:
    stratum: np.ndarray         # final Stratum per path
    x: np.ndarray               # last interior point (nan if never interior)
    h: np.ndarray               # last edge coordinate (nan if never on the edge)
    band_exit: np.ndarray       # −1 interior side, +1 edge side, 0 none
    band_exit_time: np.ndarray
    vertex_visits: np.ndarray
    occupation: np.ndarray      # time spent on (interior, edge)
    trace: Optional[list] = None


def simulate_stratified_ensemble(spec: ModelSpec, table, rule: GluingRule, start: StratifiedState,
                                 t_end: float, dt: float, seed: int, n_paths: int = 1,
                                 band: Optional[float] = None, record_stride: int = 0,
                                 path_indices=None) -> StratifiedEnsemble:
    """Vectorized stratified simulation.  Every step consumes four normals per
    path (two for the increment, two mapped to uniforms for the vertex rule),
    so a path's draws never depend on its history or on other paths."""
    if start.stratum == Stratum.ABSORBED:
        raise ValueError("cannot start from the absorbed state")
    k_star = table.k_star
    tol = vertex_tolerance(k_star)
    idx = np.arange(n_paths) if path_indices is None else np.asarray(path_indices)
    n = len(idx)
    mode = np.full(n, int(start.stratum))
    x = np.full((n, 2), np.nan)
    h = np.full(n, np.nan)
    if start.stratum == Stratum.INTERIOR:
        x[:] = start.point
        if level_function(spec, np.asarray(start.point))[0] >= -tol:
            raise ValueError("interior start must satisfy K < −vertex_tol")
    elif start.stratum == Stratum.EDGE:
        if not tol < start.h < k_star:
            raise ValueError("edge start must lie in (vertex_tol, K*)")
        h[:] = start.h
    orbit = reentry_orbit(spec, rule)
    chol = _MeanGamma(spec)
    band_exit = np.zeros(n, dtype=np.int8)
    band_time = np.full(n, np.nan)
    visits = np.zeros(n, dtype=np.int64)
    occ = np.zeros((n, 2))
    streams = NormalStreams(seed, idx, 4)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    sdt = math.sqrt(dt)
    trace = [] if record_stride else None

    def snapshot():
        trace.append([_state_of(mode[i], x[i], h[i]) for i in range(n)])

    if trace is not None:
        snapshot()
    active = np.ones(n, dtype=bool)
    for step in range(n_steps):
        run = active & (mode != Stratum.ABSORBED)
        if not run.any() and trace is None:
            break
        z = streams.next()
        if not run.any():
            if trace is not None and (step + 1) % record_stride == 0:
                snapshot()
            continue
        # vertex exits are instantaneous
        vx = np.flatnonzero(run & (mode == Stratum.VERTEX))
        if vx.size:
            visits[vx] += 1
            u = ndtr(z[vx, 2:4])
            to_edge = u[:, 0] < rule.p_edge
            e = vx[to_edge]
            mode[e] = int(Stratum.EDGE)
            h[e] = rule.excursion_scale
            d = vx[~to_edge]
            if d.size:
                mode[d] = int(Stratum.INTERIOR)
                x[d] = project_to_level(spec, orbit.at_fraction(u[~to_edge, 1]), orbit.h)
        t_new = (step + 1) * dt
        ii = np.flatnonzero(run & (mode == Stratum.INTERIOR))
        if ii.size:
            occ[ii, 0] += dt
            xn = _interior_step(chol, x[ii], z[ii], sdt)
            x[ii] = xn
            K = level_function(spec, xn)[0]
            hit = K >= -tol
            mode[ii[hit]] = int(Stratum.VERTEX)
            if band is not None:
                out = (~hit) & (K <= -band)
                band_exit[ii[out]] = -1
                band_time[ii[out]] = t_new
                active[ii[out]] = False
        ee = np.flatnonzero(run & (mode == Stratum.EDGE))
        if ee.size:
            occ[ee, 1] += dt
            he = h[ee]
            s2 = np.asarray(table.diffusion(he), dtype=float)
            hn = he + np.asarray(table.drift(he), dtype=float) * dt + np.sqrt(s2) * sdt * z[ee, 0]
            down = hn <= tol
            up = hn >= k_star
            h[ee] = np.where(up, k_star, np.where(down, tol, hn))
            mode[ee[down]] = int(Stratum.VERTEX)
            mode[ee[up]] = int(Stratum.ABSORBED)
            if band is not None:
                out = (~down) & (hn >= band)
                band_exit[ee[out]] = 1
                band_time[ee[out]] = t_new
                active[ee[out]] = False
        if trace is not None and (step + 1) % record_stride == 0:
            snapshot()
    return StratifiedEnsemble(mode, x, h, band_exit, band_time, visits, occ, trace)


def _state_of(mode, x, h) -> StratifiedState:
    m = Stratum(int(mode))
    if m == Stratum.INTERIOR:
        return StratifiedState.interior(x)
    if m == Stratum.EDGE:
        return StratifiedState.edge(h)
    return StratifiedState(m)


def simulate_stratified(spec: ModelSpec, table, rule: GluingRule, start: StratifiedState,
                        t_end: float, dt: float, seed: int, path_index: int = 0,
                        record_stride: int = 1) -> list:
    """One path on the stratified space as a list of StratifiedState."""
    ens = simulate_stratified_ensemble(spec, table, rule, start, t_end, dt, seed, 1,
                                       record_stride=record_stride, path_indices=[path_index])
    return [snap[0] for snap in ens.trace]
