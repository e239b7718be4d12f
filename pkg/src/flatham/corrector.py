"""Boundary-layer corrector B(θ, s): periodic in θ with period β₀, Bessel-type in s.

    n ∂B/∂θ + ((n+1)²/8) ∂²B/∂s² + ((n²−1)/(8s)) ∂B/∂s = R(θ) ω̄(s),

with ∂B/∂s(θ, 0) = 0 and decay as s → ∞.  Each Fourier mode
e^{2πikθ/β₀} gives an ODE in s, solved with a second-order tridiagonal
scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridMismatch, SingularMode


def bump(a: float = 1.0, b: float = 2.0) -> Callable:
    """C∞ bump supported on [a, b] with peak value 1."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)

    def f(u):
        y = (np.asarray(u, dtype=float) - mid) / half
        inside = np.abs(y) < 1
        out = np.zeros(np.shape(y))
        yi = y[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - yi * yi))
        return out

    return f


@dataclass(frozen=True)
class CorrectorProblem:
    """``rhs_modes`` maps k ≥ 0 to the complex coefficient R_k of R(θ) =
    Σ_k R_k e^{2πikθ/β₀} (negative k implied by conjugate symmetry).

    ω̄(s) = ω(s^{2p}) s^{2p}, p = 1/(n+1).
    """

    n: int = 3
    beta0: float = 2 * math.pi
    rhs_modes: dict = field(default_factory=dict)
    omega: Callable = field(default_factory=bump)
    s_max: float = 20.0
    n_s: int = 2000
    n_theta: int = 32
    zero_mean_tol: float = 1e-12

    def __post_init__(self):
        if int(self.n) != self.n or self.n <= 2:
            raise ValueError("n must be an integer > 2")
        if self.n_theta < 2 or self.n_s < 8:
            raise ValueError("grid too small")
        for k in self.rhs_modes:
            if int(k) != k or k < 0:
                raise ValueError(f"mode index must be a non-negative integer, got {k}")

    @property
    def p(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def c2(self) -> float:
        return (self.n + 1) ** 2 / 8.0

    @property
    def c1(self) -> float:
        return (self.n**2 - 1) / 8.0

    def omega_bar(self, s):
        s = np.asarray(s, dtype=float)
        u = np.abs(s) ** (2 * self.p)
        return self.omega(u) * u

    @property
    def s_grid(self):
        return np.linspace(0.0, self.s_max, self.n_s + 1)

    @property
    def theta_grid(self):
        return np.arange(self.n_theta) * (self.beta0 / self.n_theta)

    def kappa(self, k):
        return 2 * math.pi * k / self.beta0

    def rhs_field(self):
        """R(θ) ω̄(s) on the (θ, s) grid."""
        th = self.theta_grid
        R = np.zeros(len(th))
        for k, c in self.rhs_modes.items():
            if k == 0:
                R += c.real if isinstance(c, complex) else c
            else:
                R += 2 * np.real(c * np.exp(1j * self.kappa(k) * th))
        return R[:, None] * self.omega_bar(self.s_grid)[None, :]

    def refined(self, factor: int = 2) -> "CorrectorProblem":
        from dataclasses import replace

        return replace(self, n_s=self.n_s * factor)

    @classmethod
    def from_samples(cls, values, **kw):
        """Build from R sampled on the θ grid (length n_theta)."""
        v = np.asarray(values, dtype=float)
        c = np.fft.rfft(v) / len(v)
        floor = 1e-13 * max(float(np.max(np.abs(v), initial=0.0)), 1e-300)
        modes = {k: complex(c[k]) for k in range(len(c)) if abs(c[k]) > floor}
        return cls(rhs_modes=modes, n_theta=len(v), **kw)


@dataclass
class CorrectorSolution:
    theta: np.ndarray
    s: np.ndarray
    B: np.ndarray                 # (n_theta, n_s + 1), real
    modes: dict                   # k -> complex profile B_k(s)
    decay_constant: float


def _mode_matrix(problem: CorrectorProblem, k: int):
    s = problem.s_grid
    ds = s[1] - s[0]
    m = problem.n_s  # unknowns B_0 .. B_{m-1}; B_m = 0
    lam = 1j * problem.n * problem.kappa(k)
    c1, c2 = problem.c1, problem.c2
    ab = np.zeros((3, m), dtype=complex)
    # row 0: B'(0) = 0 via the ghost node B_{-1} = B_1; c1 B'/s -> c1 B''(0)
    ab[1, 0] = -2 * (c2 + c1) / ds**2 + lam
    ab[0, 1] = 2 * (c2 + c1) / ds**2
    i = np.arange(1, m)
    si = s[i]
    lower = c2 / ds**2 - c1 / (si * 2 * ds)
    diag = -2 * c2 / ds**2 + lam
    upper = c2 / ds**2 + c1 / (si * 2 * ds)
    ab[1, i] = diag
    ab[2, i - 1] = lower
    ab[0, i[:-1] + 1] = upper[:-1]
    return ab


def solve_mode(problem: CorrectorProblem, k: int, coefficient: complex) -> np.ndarray:
    """B_k on the s grid (including the Dirichlet node at s_max)."""
    f = coefficient * problem.omega_bar(problem.s_grid[:-1])
    sol = solve_banded((1, 1), _mode_matrix(problem, k), f.astype(complex))
    return np.concatenate([sol, [0.0]])


def _decay_fit(s, env, start, stop):
    m = (s >= start) & (s <= stop) & (env > 0)
    if m.sum() < 3:
        return float("nan")
    slope = np.polyfit(s[m], np.log(env[m]), 1)[0]
    return float(-1.0 / slope) if slope < 0 else float("inf")


def solve_corrector(problem: CorrectorProblem) -> CorrectorSolution:
    r0 = problem.rhs_modes.get(0, 0.0)
    if abs(r0) > problem.zero_mean_tol:
        raise SingularMode(f"the θ-mean of the right-hand side is {r0}; mode 0 is not solvable")
    nyq = problem.n_theta // 2 if problem.n_theta % 2 == 0 else None
    modes = {}
    for k, c in sorted(problem.rhs_modes.items()):
        if k == 0 or c == 0:
            continue
        if k >= problem.n_theta / 2 and not (nyq is not None and k == nyq and c == 0):
            raise GridMismatch(f"mode {k} is not resolved by n_theta = {problem.n_theta}")
        modes[k] = solve_mode(problem, k, complex(c))
    th = problem.theta_grid
    s = problem.s_grid
    B = np.zeros((len(th), len(s)))
    for k, bk in modes.items():
        B += 2 * np.real(np.exp(1j * problem.kappa(k) * th)[:, None] * bk[None, :])
    env = np.max(np.abs(B), axis=0)
    # fit past the support of ω̄, away from the Dirichlet end
    supp = s[problem.omega_bar(s) > 0]
    start = (supp.max() if supp.size else 0.0) + 1.0
    C = _decay_fit(s, env, start, 0.75 * problem.s_max)
    return CorrectorSolution(th, s, B, modes, C)


def _d_theta(problem, B):
    c = np.fft.fft(B, axis=0)
    k = np.fft.fftfreq(B.shape[0], d=1.0 / B.shape[0])
    if B.shape[0] % 2 == 0:
        k[B.shape[0] // 2] = 0.0  # Nyquist carries no derivative information
    return np.real(np.fft.ifft(c * (1j * 2 * math.pi * k / problem.beta0)[:, None], axis=0))


def corrector_residual(problem: CorrectorProblem, solution: CorrectorSolution):
    """(RMS PDE residual on interior nodes, max |∂B/∂s(θ, 0)|, max periodic mismatch).

    s-derivatives use fourth-order central differences (nodes 2 .. N−2),
    the θ-derivative is spectral, ∂B/∂s at 0 is the one-sided second-order
    difference.
    """
    th, s = problem.theta_grid, problem.s_grid
    if solution.B.shape != (len(th), len(s)) or not np.allclose(solution.s, s) or not np.allclose(solution.theta, th):
        raise GridMismatch("solution grid does not match the problem grid")
    B = solution.B
    ds = s[1] - s[0]
    i = slice(2, len(s) - 2)
    Bs = (-B[:, 4:] + 8 * B[:, 3:-1] - 8 * B[:, 1:-3] + B[:, :-4]) / (12 * ds)
    Bss = (-B[:, 4:] + 16 * B[:, 3:-1] - 30 * B[:, 2:-2] + 16 * B[:, 1:-3] - B[:, :-4]) / (12 * ds**2)
    lhs = problem.n * _d_theta(problem, B)[:, i] + problem.c2 * Bss + problem.c1 * Bs / s[None, i]
    r = lhs - problem.rhs_field()[:, i]
    l2 = float(np.sqrt(np.mean(r * r)))
    neumann = float(np.max(np.abs(-3 * B[:, 0] + 4 * B[:, 1] - B[:, 2]) / (2 * ds)))
    # value at θ = β₀ synthesized from the modes against θ = 0
    periodic = 0.0
    for k, bk in solution.modes.items():
        shift = np.exp(1j * problem.kappa(k) * problem.beta0)
        periodic = max(periodic, float(np.max(np.abs(2 * np.real(bk * shift) - 2 * np.real(bk)))))
    return l2, neumann, periodic
