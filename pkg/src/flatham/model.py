"""Problem instances: flattened Hamiltonian, periodic coefficients, generator.

Points are numpy arrays with a trailing axis of length 2; every evaluator
broadcasts over leading axes, so ``x`` may be a single point of shape ``(2,)``
or a batch of shape ``(N, 2)``.

Orientation convention: ``perp(v) = (v[1], -v[0])``, so the level flow of a
radial ``K`` turns clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DerivativeUnavailable, ModelError, NonPeriodicInput

TWO_PI = 2.0 * math.pi

# Interior blend q(r) = -1 + 8r^2 - 24r^3 + 32r^4 - 16r^5 on [0, 1/2]:
# q(1/2) = -1/2, q'(1/2) = 1, q''(1/2) = q'''(1/2) = 0, q' > 0 on (0, 1/2].
_BLEND = (-1.0, 0.0, 8.0, -24.0, 32.0, -16.0)
BLEND_RADIUS = 0.5


def perp(v):
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def _profile(rho):
    """K as a function of the (elliptic) radius, with first two derivatives."""
    rho = np.asarray(rho, dtype=float)
    inner = rho < BLEND_RADIUS
    c = _BLEND
    q = c[0] + rho**2 * (c[2] + rho * (c[3] + rho * (c[4] + rho * c[5])))
    dq = rho * (2 * c[2] + rho * (3 * c[3] + rho * (4 * c[4] + rho * 5 * c[5])))
    ddq = 2 * c[2] + rho * (6 * c[3] + rho * (12 * c[4] + rho * 20 * c[5]))
    # dq / rho, finite at the origin
    dq_over_rho = 2 * c[2] + rho * (3 * c[3] + rho * (4 * c[4] + rho * 5 * c[5]))
    g = np.where(inner, q, rho - 1.0)
    dg = np.where(inner, dq, 1.0)
    ddg = np.where(inner, ddq, 0.0)
    dg_over_rho = np.where(inner, dq_over_rho, 1.0 / np.maximum(rho, 1e-300))
    return g, dg, ddg, dg_over_rho


# ---------------------------------------------------------------------------
# vector-field catalogue for the oscillating drift; each entry returns
# (value, jacobian) with jacobian[..., i, j] = d v_i / d x_j


def _zeros_like_field(x):
    return np.zeros(x.shape[:-1] + (2,)), np.zeros(x.shape[:-1] + (2, 2))


def _const(vec):
    def f(x):
        v, J = _zeros_like_field(x)
        v[...] = vec
        return v, J

    return f


def _linear(mat):
    mat = np.asarray(mat, dtype=float)

    def f(x):
        # elementwise rather than matmul: results must not depend on batch size
        v = np.stack([mat[0, 0] * x[..., 0] + mat[0, 1] * x[..., 1],
                      mat[1, 0] * x[..., 0] + mat[1, 1] * x[..., 1]], axis=-1)
        J = np.broadcast_to(mat, x.shape[:-1] + (2, 2)).copy()
        return v, J

    return f


def _quadratic(x):
    x1, x2 = x[..., 0], x[..., 1]
    v = np.stack([x1 * x2, x1 * x1], axis=-1)
    J = np.empty(x.shape[:-1] + (2, 2))
    J[..., 0, 0] = x2
    J[..., 0, 1] = x1
    J[..., 1, 0] = 2 * x1
    J[..., 1, 1] = 0.0
    return v, J


FIELDS: dict[str, Callable] = {
    "uniform_x": _const((1.0, 0.0)),
    "uniform_y": _const((0.0, 1.0)),
    "radial": _linear([[1.0, 0.0], [0.0, 1.0]]),
    "swirl": _linear([[0.0, -1.0], [1.0, 0.0]]),
    "shear": _linear([[0.0, 1.0], [0.0, 0.0]]),
    "saddle": _linear([[1.0, 0.0], [0.0, -1.0]]),
    "quadratic": _quadratic,
}


@dataclass(frozen=True)
class Harmonic:
    """One term ``amplitude * trig(index * t) * FIELDS[field](x)``."""

    index: int
    field: str
    amplitude: float = 1.0
    phase: str = "cos"  # "cos" or "sin"

    def __post_init__(self):
        if int(self.index) != self.index or self.index < 1:
            raise ModelError(f"harmonic index must be a positive integer, got {self.index}")
        if self.field not in FIELDS:
            raise ModelError(f"unknown drift field {self.field!r}; known: {sorted(FIELDS)}")
        if self.phase not in ("cos", "sin"):
            raise ModelError(f"harmonic phase must be 'cos' or 'sin', got {self.phase!r}")


def _as_matrix(m):
    a = np.asarray(m, dtype=float)
    if a.shape != (2, 2):
        raise ModelError(f"expected a 2x2 matrix, got shape {a.shape}")
    return tuple(tuple(float(v) for v in row) for row in a)


@dataclass(frozen=True)
class SigmaModel:
    """sigma(x, t) = base(x) + cos(t) * cos_matrix.

    kind: "identity", "constant" (``matrix``), "statedep-polynomial"
    (sum of ``x1**i * x2**j * M`` over ``terms``) or "zero" (degenerate test
    mode, exempt from the ellipticity check).
    """

    kind: str = "identity"
    matrix: tuple = ((1.0, 0.0), (0.0, 1.0))
    terms: tuple = ()
    cos_matrix: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("identity", "constant", "statedep-polynomial", "zero"):
            raise ModelError(f"unknown sigma kind {self.kind!r}")
        object.__setattr__(self, "matrix", _as_matrix(self.matrix))
        if self.cos_matrix is not None:
            object.__setattr__(self, "cos_matrix", _as_matrix(self.cos_matrix))
        terms = []
        for term in self.terms:
            i, j, m = term
            if int(i) != i or int(j) != j or i < 0 or j < 0:
                raise ModelError(f"polynomial exponents must be non-negative integers: {term}")
            terms.append((int(i), int(j), _as_matrix(m)))
        if self.kind == "statedep-polynomial" and not terms:
            raise ModelError("statedep-polynomial sigma needs at least one term")
        object.__setattr__(self, "terms", tuple(terms))

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (2, 2)
        if self.kind == "identity":
            s = np.broadcast_to(np.eye(2), shape).copy()
        elif self.kind == "constant":
            s = np.broadcast_to(np.array(self.matrix), shape).copy()
        elif self.kind == "zero":
            return np.zeros(shape)
        else:
            s = np.zeros(shape)
            for i, j, m in self.terms:
                mono = x[..., 0] ** i * x[..., 1] ** j
                s += mono[..., None, None] * np.array(m)
        if self.cos_matrix is not None:
            ct = np.cos(np.asarray(t, dtype=float))
            s = s + np.asarray(ct)[..., None, None] * np.array(self.cos_matrix)
        return s


@dataclass(frozen=True)
class ModelSpec:
    """Full problem instance.

    ``family`` is "radial" (K = |x| - 1 outside the blend disc) or
    "elliptic" (K = rho - 1 with rho the elliptic radius for ``semi_axes``).
    The period mean of the drift is ∇⊥H by construction: oscillating terms
    are pure harmonics of index >= 1.
    """

    family: str = "radial"
    n: int = 3
    h_star: float = 1.0
    epsilon: float = 0.05
    semi_axes: tuple = (1.0, 1.0)
    harmonics: tuple = ()
    sigma: SigmaModel = field(default_factory=SigmaModel)
    collar_a: Optional[float] = None

    def __post_init__(self):
        if self.family not in ("radial", "elliptic"):
            raise ModelError(f"unknown K family {self.family!r}")
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n <= 2:
            raise ModelError(f"flatness exponent n must be an integer > 2, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not self.epsilon > 0:
            raise ModelError("epsilon must be positive")
        if not self.h_star > 0:
            raise ModelError("h_star must be positive")
        axes = tuple(float(a) for a in self.semi_axes)
        if self.family == "radial":
            axes = (1.0, 1.0)
        if len(axes) != 2 or min(axes) <= 0:
            raise ModelError("semi_axes must be two positive numbers")
        object.__setattr__(self, "semi_axes", axes)
        object.__setattr__(self, "harmonics", tuple(self.harmonics))
        if self.collar_a is None:
            object.__setattr__(self, "collar_a", default_collar_a(self))
        elif not 0 < self.collar_a < 1:
            raise ModelError("collar_a must lie in (0, 1)")
        _check_collar(self)
        if self.sigma.kind != "zero":
            _check_ellipticity(self)

    @property
    def k_star(self) -> float:
        return self.h_star ** (1.0 / self.n)

    @property
    def max_harmonic(self) -> int:
        return max((h.index for h in self.harmonics), default=0)

    def with_(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **changes)


# ---------------------------------------------------------------------------
# K, H and their derivatives


def level_function(spec: ModelSpec, x):
    """Return (K, gradK, hessK) at ``x``."""
    x = np.asarray(x, dtype=float)
    a, b = spec.semi_axes
    D = np.array([1.0 / a**2, 1.0 / b**2])
    rho = np.sqrt((x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2)
    g, dg, ddg, dg_over_rho = _profile(rho)
    Dx = x * D
    # grad rho = Dx / rho; grad K = g'(rho) grad rho
    grad = dg_over_rho[..., None] * Dx
    safe = np.maximum(rho, 1e-300)
    u = Dx / safe[..., None]  # grad rho (zero-safe only away from origin)
    outer = u[..., :, None] * u[..., None, :]
    # hess K = g'' u u^T + (g'/rho) (D - u u^T)
    hess = ddg[..., None, None] * outer + dg_over_rho[..., None, None] * (np.diag(D) - outer)
    return g, grad, hess


def eval_hamiltonian(spec: ModelSpec, x):
    """Return (H, gradH, K, gradK)."""
    K, gK, _ = level_function(spec, x)
    Kp = np.maximum(K, 0.0)
    H = Kp**spec.n
    gH = (spec.n * Kp ** (spec.n - 1))[..., None] * gK
    return H, gH, K, gK


def mean_drift(spec: ModelSpec, x):
    """∇⊥H(x), the period average of the drift."""
    _, gH, _, _ = eval_hamiltonian(spec, x)
    return perp(gH)


def harmonic_fields(spec: ModelSpec, x):
    """Group harmonics by index: {k: (c_k, Jc_k, s_k, Js_k)} evaluated at x."""
    x = np.asarray(x, dtype=float)
    out = {}
    for hm in spec.harmonics:
        v, J = FIELDS[hm.field](x)
        if hm.index not in out:
            zv, zJ = _zeros_like_field(x)
            out[hm.index] = [zv, zJ, zv.copy(), zJ.copy()]
        slot = 0 if hm.phase == "cos" else 2
        out[hm.index][slot] = out[hm.index][slot] + hm.amplitude * v
        out[hm.index][slot + 1] = out[hm.index][slot + 1] + hm.amplitude * J
    return out


def drift(spec: ModelSpec, x, t):
    """b(x, t) = ∇⊥H(x) + Σ_k cos(kt) c_k(x) + sin(kt) s_k(x)."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    b = mean_drift(spec, x)
    for hm in spec.harmonics:
        v, _ = FIELDS[hm.field](x)
        trig = np.cos(hm.index * t) if hm.phase == "cos" else np.sin(hm.index * t)
        b = b + (hm.amplitude * trig)[..., None] * v
    return b


def eval_coefficients(spec: ModelSpec, x, t):
    """Return (b, sigma, gamma) with gamma = sigma sigma^T."""
    s = spec.sigma(x, t)
    gamma = s @ np.swapaxes(s, -1, -2)
    return drift(spec, x, t), s, gamma


def mean_gamma(spec: ModelSpec, x, nodes: int = 32):
    """Period average of gamma by the uniform-grid rule."""
    x = np.asarray(x, dtype=float)

    def g(xx, t):
        s = spec.sigma(xx, t)
        return s @ np.swapaxes(s, -1, -2)

    return time_average(g, x, nodes)


def time_average(f, x, nodes: int = 256, tol: float = 1e-9):
    """(1/2π)∫₀^{2π} f(x, t) dt on a uniform grid (exact for trig polynomials
    of degree < nodes/2).

    ``f(x, t)`` takes a scalar ``t`` and may return any array shape.
    """
    if nodes < 2:
        raise ValueError("nodes must be >= 2")
    f0 = np.asarray(f(x, 0.0), dtype=float)
    f2pi = np.asarray(f(x, TWO_PI), dtype=float)
    scale = 1.0 + np.max(np.abs(f0), initial=0.0)
    if np.max(np.abs(f0 - f2pi), initial=0.0) > tol * scale:
        raise NonPeriodicInput("f(x, 0) and f(x, 2π) differ")
    acc = f0.copy()
    for j in range(1, nodes):
        acc = acc + np.asarray(f(x, TWO_PI * j / nodes), dtype=float)
    return acc / nodes


# ---------------------------------------------------------------------------
# generator and bracket


@dataclass(frozen=True)
class TestFunction:
    """A C² test function with optional analytic derivatives.

    Callables take points of shape (..., 2).  Missing derivatives fall back to
    central differences with step ``fd_step`` (None disables the fallback).
    """

    __test__ = False  # not a pytest class

    value: Callable
    gradient: Optional[Callable] = None
    hessian: Optional[Callable] = None
    fd_step: Optional[float] = 1e-5

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        if self.fd_step is None:
            raise DerivativeUnavailable("no analytic gradient and no fd_step")
        h = self.fd_step
        out = np.empty(x.shape)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            out[..., i] = (self.value(x + e) - self.value(x - e)) / (2 * h)
        return out

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(x), dtype=float)
        if self.fd_step is None:
            raise DerivativeUnavailable("no analytic hessian and no fd_step")
        h = self.fd_step if self.gradient is not None else max(self.fd_step, 1e-4)
        out = np.empty(x.shape + (2,))
        if self.gradient is not None:
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                out[..., :, j] = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
            return 0.5 * (out + np.swapaxes(out, -1, -2))
        f0 = self.value(x)
        for i in range(2):
            ei = np.zeros(2)
            ei[i] = h
            out[..., i, i] = (self.value(x + ei) - 2 * f0 + self.value(x - ei)) / h**2
        e0, e1 = np.array([h, 0.0]), np.array([0.0, h])
        mixed = (
            self.value(x + e0 + e1) - self.value(x + e0 - e1)
            - self.value(x - e0 + e1) + self.value(x - e0 - e1)
        ) / (4 * h * h)
        out[..., 0, 1] = mixed
        out[..., 1, 0] = mixed
        return out


def level_test_function(spec: ModelSpec) -> TestFunction:
    """K itself, with analytic derivatives."""
    return TestFunction(
        value=lambda x: level_function(spec, x)[0],
        gradient=lambda x: level_function(spec, x)[1],
        hessian=lambda x: level_function(spec, x)[2],
    )


def generator_apply(spec: ModelSpec, f: TestFunction, x, t):
    """(L_t f)(x) = ½ Σ γ_ij ∂_ij f."""
    _, _, gamma = eval_coefficients(spec, x, t)
    return 0.5 * np.einsum("...ij,...ij->...", gamma, f.hess(x))


def bracket_apply(spec: ModelSpec, f: TestFunction, g: TestFunction, x, t):
    """<df, dg>_t(x) = Σ γ_ij ∂_i f ∂_j g."""
    _, _, gamma = eval_coefficients(spec, x, t)
    return np.einsum("...i,...ij,...j->...", f.grad(x), gamma, g.grad(x))


# ---------------------------------------------------------------------------
# validation helpers


def _sample_box(spec: ModelSpec, level: float, m: int = 64):
    a, b = spec.semi_axes
    R = 1.05 * (1.0 + level) * max(a, b)
    g = np.linspace(-R, R, m)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=-1)


def _check_ellipticity(spec: ModelSpec):
    pts = _sample_box(spec, spec.k_star, 40)
    K = level_function(spec, pts)[0]
    pts = pts[K <= spec.k_star]
    for t in np.linspace(0.0, TWO_PI, 9)[:-1]:
        s = spec.sigma(pts, t)
        gam = s @ np.swapaxes(s, -1, -2)
        lam = np.linalg.eigvalsh(gam)[..., 0]
        if np.min(lam) <= 1e-12:
            raise ModelError("gamma = sigma sigma^T is not positive definite on the closure of I")


def _grad_norm_on_band(spec: ModelSpec, lo: float, hi: float, m: int = 720):
    """min and max of |∇K| over {lo <= K <= hi} sampled on rays."""
    a, b = spec.semi_axes
    ang = np.linspace(0.0, TWO_PI, m, endpoint=False)
    levels = np.linspace(lo, hi, 41)
    # for both families K = g(rho) with rho the elliptic radius, so the level
    # h sits at rho = g^{-1}(h) on every ray
    rho = np.array([_inverse_profile(h) for h in levels])
    P = rho[:, None, None] * np.stack([a * np.cos(ang), b * np.sin(ang)], axis=-1)[None]
    gK = level_function(spec, P.reshape(-1, 2))[1]
    nrm = np.linalg.norm(gK, axis=-1)
    return nrm.min(), nrm.max()


def _inverse_profile(h: float) -> float:
    if h >= -0.5:
        return 1.0 + h
    from scipy.optimize import brentq

    return brentq(lambda r: _profile(np.array(r))[0] - h, 0.0, 0.5, xtol=1e-15)


def default_collar_a(spec: ModelSpec) -> float:
    """Largest a <= 0.4 on a 0.01 grid with min |∇K| >= 0.5 on {|K| <= a}."""
    for a in np.arange(0.40, 0.0, -0.01):
        lo, _ = _grad_norm_on_band(spec, -a, a)
        if lo >= 0.5:
            return float(round(a, 10))
    raise ModelError("no collar with |∇K| >= 0.5 found")


def _check_collar(spec: ModelSpec):
    lo, _ = _grad_norm_on_band(spec, -spec.collar_a, spec.collar_a)
    if lo <= 0:
        raise ModelError("∇K vanishes inside the collar")


def builtin_specs() -> dict[str, ModelSpec]:
    """Named reference instances used by the checks and experiments."""
    return {
        "radial": ModelSpec(),
        "radial_osc": ModelSpec(
            harmonics=(
                Harmonic(1, "shear", 0.5, "cos"),
                Harmonic(1, "radial", 0.5, "sin"),
                Harmonic(2, "uniform_x", 0.3, "cos"),
            )
        ),
        "radial_aniso": ModelSpec(
            sigma=SigmaModel("constant", matrix=((1.0, 0.0), (0.0, 0.6)), cos_matrix=((0.3, 0.0), (0.0, 0.0)))
        ),
        # anisotropic noise plus a harmonic pair with a nonzero orbit-averaged
        # drift correction: finite-ε effects are visible in the law of K
        "radial_mixed": ModelSpec(
            sigma=SigmaModel("constant", matrix=((1.0, 0.0), (0.0, 0.6)), cos_matrix=((0.3, 0.0), (0.0, 0.0))),
            harmonics=(Harmonic(1, "uniform_y", 0.5, "cos"), Harmonic(1, "quadratic", 0.5, "sin")),
        ),
        "elliptic": ModelSpec(
            family="elliptic",
            semi_axes=(1.25, 0.85),
            sigma=SigmaModel(
                "statedep-polynomial",
                terms=((0, 0, ((1.0, 0.1), (0.0, 0.9))), (1, 0, ((0.1, 0.0), (0.0, 0.0)))),
            ),
            harmonics=(Harmonic(1, "swirl", 0.4, "cos"), Harmonic(1, "uniform_y", 0.5, "sin")),
        ),
    }
