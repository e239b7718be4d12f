"""Fast level-set flow, orbit discretization and the collar chart (Θ, K)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import LeftCollar, LevelNotClosed, StepFailure
from .model import TWO_PI, ModelSpec, level_function, mean_gamma, perp

RTOL = 1e-11
ATOL = 1e-12


def _level_rhs(spec):
    def rhs(t, y):
        return perp(level_function(spec, y)[1])

    return rhs


def integrate_level_flow(spec: ModelSpec, x, t: float):
    """φ_t(x) for the flow generated by ∇⊥K (negative t runs backwards)."""
    x = np.asarray(x, dtype=float)
    if t == 0:
        return x.copy()
    sol = solve_ivp(_level_rhs(spec), (0.0, t), x, method="DOP853", rtol=RTOL, atol=ATOL)
    if not sol.success:
        raise StepFailure(sol.message)
    return sol.y[:, -1]


def reference_direction(spec: ModelSpec):
    """Unit vector through the default base point x* = ∂V ∩ positive x1-axis."""
    return np.array([1.0, 0.0])


def point_on_level(spec: ModelSpec, h: float, direction=None):
    """Intersection of K⁻¹(h) with the ray through ``direction``."""
    u = reference_direction(spec) if direction is None else np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    if h <= -1.0:
        raise ValueError("level below the minimum of K")
    k = lambda r: float(level_function(spec, r * u)[0]) - h
    hi = 1.0
    while k(hi) < 0:
        hi *= 2.0
    r = brentq(k, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return r * u


def _trace_period(spec: ModelSpec, x):
    """Integrate φ from x until the first return to the ray through x.

    Returns (period, dense solution).  Level curves of the built-in families
    are star-shaped about the origin and the flow is clockwise, so the return
    is a decreasing zero of the cross product with the starting ray.
    """
    x = np.asarray(x, dtype=float)
    u = x / np.linalg.norm(x)

    def opposite(t, y):
        return u[0] * y[1] - u[1] * y[0]

    opposite.terminal = True
    opposite.direction = 1

    def back_on_ray(t, y):
        return u[0] * y[1] - u[1] * y[0]

    back_on_ray.direction = -1

    speed = np.linalg.norm(level_function(spec, x)[1])
    t_max = 50.0 * TWO_PI * (np.linalg.norm(x) + 1.0) / max(speed, 1e-3)
    rhs = _level_rhs(spec)
    half = solve_ivp(rhs, (0.0, t_max), x, method="DOP853", rtol=RTOL, atol=ATOL, events=opposite)
    if not half.success:
        raise StepFailure(half.message)
    if half.t_events[0].size == 0:
        raise LevelNotClosed(f"orbit never reached the opposite ray within t={t_max:g}")
    t_half = float(half.t_events[0][0])
    sol = solve_ivp(rhs, (0.0, 3.0 * t_half), x, method="DOP853", rtol=RTOL, atol=ATOL,
                    dense_output=True, events=back_on_ray)
    if not sol.success:
        raise StepFailure(sol.message)
    hits = sol.t_events[0][sol.t_events[0] > t_half]
    if hits.size == 0:
        raise LevelNotClosed("no return to the starting ray")
    period = float(hits[0])
    back = sol.sol(period)
    if np.linalg.norm(back - x) > 1e-6:
        raise LevelNotClosed(f"orbit misses its start by {np.linalg.norm(back - x):.3g}")
    return period, sol


@dataclass(frozen=True)
class Orbit:
    """Level curve K⁻¹(h) sampled uniformly in flow time.

    ``weights`` are arclength elements |∇K| Δt, so their sum is the
    circumference and Σ w f / |∇K| over Σ w / |∇K| is the flow-time mean.
    """

    h: float
    points: np.ndarray
    weights: np.ndarray
    period: float
    base_index: int = 0

    @property
    def circumference(self) -> float:
        return float(np.sum(self.weights))

    def __len__(self):
        return len(self.points)

    def at_fraction(self, u):
        """Points at flow-time fractions ``u`` in [0, 1) by periodic linear
        interpolation between nodes (see ``project_to_level``)."""
        u = np.asarray(u, dtype=float) % 1.0
        n = len(self.points)
        pos = u * n
        i0 = np.floor(pos).astype(int) % n
        w = (pos - np.floor(pos))[..., None]
        p = (1 - w) * self.points[i0] + w * self.points[(i0 + 1) % n]
        return p

    def __hash__(self):
        return hash((self.h, self.period, len(self.points)))

    def __eq__(self, other):
        return self is other


def project_to_level(spec: ModelSpec, p, h: float, iterations: int = 3):
    p = np.array(p, dtype=float)
    for _ in range(iterations):
        K, g, _ = level_function(spec, p)
        p = p - ((K - h) / np.sum(g * g, axis=-1))[..., None] * g
    return p


@lru_cache(maxsize=512)
def _orbit_cached(spec: ModelSpec, h: float, n_points: int) -> Orbit:
    x0 = point_on_level(spec, h)
    period, sol = _trace_period(spec, x0)
    t = np.arange(n_points) * (period / n_points)
    pts = sol.sol(t).T.copy()
    pts[0] = x0
    speed = np.linalg.norm(level_function(spec, pts)[1], axis=-1)
    weights = speed * (period / n_points)
    pts.setflags(write=False)
    weights.setflags(write=False)
    return Orbit(h=float(h), points=pts, weights=weights, period=period)


def discretize_orbit(spec: ModelSpec, h: float, n_points: int = 256) -> Orbit:
    """Trace K⁻¹(h) with the level flow from its point on the reference ray."""
    if n_points < 4:
        raise ValueError("n_points must be >= 4")
    if h > spec.k_star * (1 + 1e-12) + 1e-12:
        raise ValueError(f"level {h} above K* = {spec.k_star}")
    if h <= -spec.collar_a * (1 + 1e-12) - 1e-12 and h <= -0.5:
        raise ValueError(f"level {h} below the traced range")
    return _orbit_cached(spec, float(h), int(n_points))


def transversal_flow(spec: ModelSpec, x, t: float):
    """ζ_t(x) for the flow ∇K/|∇K|², along which K grows at unit rate."""
    x = np.asarray(x, dtype=float)
    K0 = float(level_function(spec, x)[0])
    a = spec.collar_a
    if abs(K0) > a * (1 + 1e-12) or abs(K0 + t) > a * (1 + 1e-12):
        raise LeftCollar(f"K would leave (-{a}, {a}): start {K0:.6g}, end {K0 + t:.6g}")
    if t == 0:
        return x.copy()

    def rhs(_, y):
        g = level_function(spec, y)[1]
        return g / np.dot(g, g)

    sol = solve_ivp(rhs, (0.0, t), x, method="DOP853", rtol=1e-12, atol=1e-13)
    if not sol.success:
        raise StepFailure(sol.message)
    return sol.y[:, -1]


def diffusion_weight(spec: ModelSpec, x, nodes: int = 32):
    """(M<dK, dK>)(x) = ∇Kᵀ (Mγ) ∇K."""
    g = level_function(spec, x)[1]
    G = mean_gamma(spec, x, nodes)
    return np.einsum("...i,...ij,...j->...", g, G, g)


def _clockwise_angle(p, ref_angle):
    ang = np.arctan2(p[..., 1], p[..., 0])
    return np.mod(ref_angle - ang, TWO_PI)


class CollarChart:
    """Flow-time coordinate Θ and level K on the collar {|K| < a}.

    Θ is tabulated on (angle × level): per level a periodic cubic spline in
    the clockwise polar angle measured from the reference curve, linear
    interpolation between levels.
    """

    def __init__(self, spec, x_star, levels, betas, angle_offsets, splines, reference_curve):
        self.spec = spec
        self.a = spec.collar_a
        self.x_star = np.asarray(x_star, dtype=float)
        self.levels = np.asarray(levels)
        self.betas = np.asarray(betas)
        self.angle_offsets = np.asarray(angle_offsets)
        self._splines = splines
        self.reference_curve = np.asarray(reference_curve)
        self._beta_spline = CubicSpline(self.levels, self.betas)

    def beta(self, s):
        return self._beta_spline(np.asarray(s, dtype=float))

    def _theta_on_level(self, j, ang):
        rel = np.mod(ang - self.angle_offsets[j], TWO_PI)
        return self._splines[j](rel) + self.betas[j] * rel / TWO_PI

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        s = level_function(self.spec, x)[0]
        if np.any(np.abs(s) > self.a * (1 + 1e-9)):
            raise LeftCollar("theta is defined on the collar only")
        ang = _clockwise_angle(x, 0.0)
        j = np.clip(np.searchsorted(self.levels, s) - 1, 0, len(self.levels) - 2)
        s0, s1 = self.levels[j], self.levels[j + 1]
        w = (s - s0) / (s1 - s0)
        th0 = np.empty(np.shape(s))
        th1 = np.empty(np.shape(s))
        for jj in np.unique(j):
            m = j == jj
            th0[m] = self._theta_on_level(jj, ang[m])
            th1[m] = self._theta_on_level(jj + 1, ang[m])
        return (1 - w) * th0 + w * th1

    def coordinates(self, x):
        return self.theta(x), level_function(self.spec, x)[0]


def build_collar_chart(spec: ModelSpec, x_star=None, n_theta: int = 512, n_s: int = 41,
                       nodes: int = 32) -> CollarChart:
    """Tabulate Θ(x) = ∫₀ᵗ (M<dK,dK>)(φ_u(x̃)) du with x̃ = ζ_s(x*) on the
    reference curve, and β(s) = Θ after one full period of level s."""
    if x_star is None:
        x_star = point_on_level(spec, 0.0)
    x_star = np.asarray(x_star, dtype=float)
    if abs(float(level_function(spec, x_star)[0])) > 1e-8:
        raise ValueError("x_star must lie on ∂V")
    a = spec.collar_a
    levels = np.linspace(-a, a, n_s)
    ref = []
    betas, offsets, splines = [], [], []

    def rhs(t, y):
        p = y[:2]
        g = level_function(spec, p)[1]
        return np.array([g[1], -g[0], float(diffusion_weight(spec, p, nodes))])

    for s in levels:
        x0 = transversal_flow(spec, x_star, float(s))
        ref.append(x0)
        period, _ = _trace_period(spec, x0)
        sol = solve_ivp(rhs, (0.0, period), np.array([x0[0], x0[1], 0.0]), method="DOP853",
                        rtol=RTOL, atol=ATOL, dense_output=True)
        if not sol.success:
            raise StepFailure(sol.message)
        beta = float(sol.y[2, -1])
        t = np.linspace(0.0, period, n_theta + 1)
        Y = sol.sol(t)
        off = math.atan2(x0[1], x0[0])
        off = -off % TWO_PI  # clockwise angle of x0 measured from the +x1 axis
        ang = np.unwrap(np.arctan2(Y[1], Y[0]))
        rel = (ang[0] - ang)  # clockwise progress from x0, 0 .. 2π
        rel[-1] = TWO_PI
        rem = Y[2] - beta * rel / TWO_PI
        rem[-1] = rem[0]
        betas.append(beta)
        offsets.append(off)
        splines.append(CubicSpline(rel, rem, bc_type="periodic"))
    return CollarChart(spec, x_star, levels, betas, offsets, splines, ref)


def beta_level(spec: ModelSpec, s: float, n_points: int = 512, nodes: int = 32) -> float:
    """β(s) = ∮_{K⁻¹(s)} (M<dK,dK>)/|∇K| dl, the flow-time integral of the weight."""
    orbit = discretize_orbit(spec, s, n_points)
    dt = orbit.period / len(orbit)
    return float(np.sum(diffusion_weight(spec, orbit.points, nodes)) * dt)
