"""Orbit averaging, the oscillation antiderivative Φ_ψ and the edge coefficients."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import EllipticityViolation, OnBoundary
from .flow import _trace_period, discretize_orbit, point_on_level
from .model import (
    ModelSpec,
    drift,
    harmonic_fields,
    level_function,
    mean_drift,
    mean_gamma,
    time_average,
)


def level_average(spec: ModelSpec, f, h: float, n_points: int = 256) -> float:
    """(∮ f/|∇K| dl) / (∮ 1/|∇K| dl) over K⁻¹(h)."""
    orbit = discretize_orbit(spec, h, n_points)
    w = orbit.weights / np.linalg.norm(level_function(spec, orbit.points)[1], axis=-1)
    vals = np.asarray(f(orbit.points), dtype=float)
    return float(np.sum(w * vals) / np.sum(w))


def pre_average(spec: ModelSpec, f, x, n_points: int = 256) -> float:
    """f(x) inside V, the level average of f on the orbit of x inside U."""
    x = np.asarray(x, dtype=float)
    K = float(level_function(spec, x)[0])
    if abs(K) <= 1e-10:
        raise OnBoundary("the pre-averaging operator is undefined on ∂V")
    if K < 0:
        return float(f(x))
    return level_average(spec, f, K, n_points)


# ---------------------------------------------------------------------------
# ψ = (∇K, b) and its periodic antiderivative


def _psi_parts(spec: ModelSpec, x):
    """{k: (A_k, ∇A_k, B_k, ∇B_k)} with A_k = (∇K, c_k), B_k = (∇K, s_k)."""
    _, gK, hK = level_function(spec, x)
    parts = {}
    for k, (c, Jc, s, Js) in harmonic_fields(spec, x).items():
        A = np.sum(gK * c, axis=-1)
        B = np.sum(gK * s, axis=-1)
        # ∇(∇K, v) = HessK v + Jvᵀ ∇K
        gA = np.einsum("...ij,...j->...i", hK, c) + np.einsum("...ji,...j->...i", Jc, gK)
        gB = np.einsum("...ij,...j->...i", hK, s) + np.einsum("...ji,...j->...i", Js, gK)
        parts[k] = (A, gA, B, gB)
    return parts


def psi(spec: ModelSpec, x, t):
    """ψ(x, t) = (∇K(x), b(x, t))."""
    gK = level_function(spec, x)[1]
    return np.sum(gK * drift(spec, x, t), axis=-1)


def phi_psi(spec: ModelSpec, x, t):
    """Φ_ψ(x, t) = ∫₀ᵗ ψ(x, u) du, in closed form from the harmonic sum."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1])
    for k, (A, _, B, _) in _psi_parts(spec, x).items():
        out = out + (np.sin(k * t) * A + (1.0 - np.cos(k * t)) * B) / k
    return out


def grad_phi_psi(spec: ModelSpec, x, t):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for k, (_, gA, _, gB) in _psi_parts(spec, x).items():
        out = out + (np.sin(k * t) * gA + (1.0 - np.cos(k * t)) * gB) / k
    return out


def drift_correction(spec: ModelSpec, x, nodes: int = 256):
    """(M(∇Φ_ψ, b))(x) by period quadrature."""
    x = np.asarray(x, dtype=float)
    if not spec.harmonics:
        return np.zeros(x.shape[:-1])
    # the integrand is a trig polynomial of degree 2 * max harmonic
    nodes = max(nodes, 4 * spec.max_harmonic + 2)
    # t-independent pieces are evaluated once
    parts = _psi_parts(spec, x)
    fields = harmonic_fields(spec, x)
    mean = mean_drift(spec, x)

    def integrand(_, t):
        g = np.zeros(x.shape)
        b = mean.copy()
        for k, (_, gA, _, gB) in parts.items():
            g = g + (np.sin(k * t) * gA + (1.0 - np.cos(k * t)) * gB) / k
            c, _, s, _ = fields[k]
            b = b + np.cos(k * t) * c + np.sin(k * t) * s
        return np.sum(g * b, axis=-1)

    return time_average(integrand, x, nodes)


def mean_generator_k(spec: ModelSpec, x, nodes: int = 32):
    """(M(L K))(x) = ½ (Mγ) : Hess K."""
    hK = level_function(spec, x)[2]
    return 0.5 * np.einsum("...ij,...ij->...", mean_gamma(spec, x, nodes), hK)


def mean_bracket_k(spec: ModelSpec, x, nodes: int = 32):
    """(M<dK, dK>)(x)."""
    gK = level_function(spec, x)[1]
    return np.einsum("...i,...ij,...j->...", gK, mean_gamma(spec, x, nodes), gK)


def edge_drift_integrand(spec: ModelSpec, x, nodes: int = 256):
    """M(L K − (∇Φ_ψ, b)), the quantity orbit-averaged into b̄."""
    return mean_generator_k(spec, x, min(nodes, 64)) - drift_correction(spec, x, nodes)


def psi_orbit_average(spec: ModelSpec, f, x, n_nodes: int = 96) -> float:
    """Ψ_f(x) = (1/η) ∫₀^η t f(φ_t(x)) dt along the orbit through x."""
    x = np.asarray(x, dtype=float)
    period, sol = _trace_period(spec, x)
    z, w = np.polynomial.legendre.leggauss(n_nodes)
    # composite Gauss–Legendre on 4 panels
    panels = 4
    total = 0.0
    for p in range(panels):
        a, b = period * p / panels, period * (p + 1) / panels
        t = 0.5 * (b - a) * z + 0.5 * (a + b)
        pts = sol.sol(t).T
        total += 0.5 * (b - a) * np.sum(w * t * np.asarray(f(pts), dtype=float))
    return float(total / period)


# ---------------------------------------------------------------------------
# reduced coefficients


@dataclass(frozen=True)
class ReducedCoefficientTable:
    """Tabulated b̄(h), σ̄²(h) on (h_min, K*] with shape-preserving interpolation.

    Values below h_min (down to 0) come from the interpolant's extrapolation.
    """

    h_grid: np.ndarray
    b_bar: np.ndarray
    sigma2_bar: np.ndarray
    k_star: float
    h_min: float
    interpolation: str = "monotone_cubic"

    def __post_init__(self):
        if np.any(np.diff(self.h_grid) <= 0):
            raise ValueError("h_grid must be increasing")
        if np.any(self.sigma2_bar <= 0):
            raise EllipticityViolation("σ̄² must be positive on the whole table")
        if self.interpolation not in ("monotone_cubic", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "monotone_cubic":
            object.__setattr__(self, "_b", PchipInterpolator(self.h_grid, self.b_bar, extrapolate=True))
            object.__setattr__(self, "_s", PchipInterpolator(self.h_grid, self.sigma2_bar, extrapolate=True))

    def drift(self, h):
        h = np.asarray(h, dtype=float)
        if self.interpolation == "linear":
            return _lin_extrap(self.h_grid, self.b_bar, h)
        return self._b(h)

    def diffusion(self, h):
        h = np.asarray(h, dtype=float)
        if self.interpolation == "linear":
            return _lin_extrap(self.h_grid, self.sigma2_bar, h)
        return self._s(h)

    def rows(self):
        return list(zip(self.h_grid.tolist(), self.b_bar.tolist(), self.sigma2_bar.tolist()))


def _lin_extrap(xg, yg, x):
    y = np.interp(x, xg, yg)
    lo = x < xg[0]
    slope = (yg[1] - yg[0]) / (xg[1] - xg[0])
    return np.where(lo, yg[0] + slope * (x - xg[0]), y)


@dataclass(frozen=True)
class EdgeCoefficients:
    """Closed-form edge coefficients (same interface as the table)."""

    b: object
    sigma2: object
    k_star: float = 1.0

    def drift(self, h):
        return np.broadcast_to(np.asarray(self.b(np.asarray(h, dtype=float)), dtype=float), np.shape(h)) * 1.0

    def diffusion(self, h):
        return np.broadcast_to(np.asarray(self.sigma2(np.asarray(h, dtype=float)), dtype=float), np.shape(h)) * 1.0


def marginal_coefficients(spec: ModelSpec, h: float, n_points: int = 256, nodes: int = 256):
    """(b̄(h), σ̄²(h)) at a single level; negative h uses the orbits of the
    smooth interior extension of K."""
    orbit = discretize_orbit(spec, h, n_points)
    pts = orbit.points
    w = orbit.weights / np.linalg.norm(level_function(spec, pts)[1], axis=-1)
    w = w / np.sum(w)
    b = float(np.sum(w * edge_drift_integrand(spec, pts, nodes)))
    s2 = float(np.sum(w * mean_bracket_k(spec, pts)))
    return b, s2


def default_h_grid(spec: ModelSpec, size: int = 64):
    k = spec.k_star
    return np.linspace(1e-3 * k, k, size)


def tabulate_reduced(spec: ModelSpec, h_grid=None, n_points: int = 256, nodes: int = 256,
                     interpolation: str = "monotone_cubic", threads: int = 1) -> ReducedCoefficientTable:
    """b̄ = A_K(M(LK − (∇Φ_ψ, b))) and σ̄² = A_K(M<dK,dK>) on ``h_grid``."""
    h_grid = default_h_grid(spec) if h_grid is None else np.asarray(h_grid, dtype=float)
    if np.any(h_grid <= 0) or np.any(h_grid > spec.k_star * (1 + 1e-12)):
        raise ValueError("h_grid must lie in (0, K*]")
    job = lambda h: marginal_coefficients(spec, float(h), n_points, nodes)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            vals = list(ex.map(job, h_grid))
    else:
        vals = [job(h) for h in h_grid]
    b = np.array([v[0] for v in vals])
    s2 = np.array([v[1] for v in vals])
    if np.any(s2 <= 0):
        raise EllipticityViolation(f"σ̄² <= 0 at h = {h_grid[s2 <= 0]}")
    return ReducedCoefficientTable(h_grid, b, s2, spec.k_star, float(h_grid[0]), interpolation)


def boundary_diffusion(spec: ModelSpec, n_points: int = 256) -> float:
    """σ̄² evaluated directly on ∂V = K⁻¹(0)."""
    return level_average(spec, lambda p: mean_bracket_k(spec, p), 0.0, n_points)
