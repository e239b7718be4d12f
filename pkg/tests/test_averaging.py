import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flatham.averaging import (
    ReducedCoefficientTable, _psi_parts, boundary_diffusion, drift_correction, grad_phi_psi,
    level_average, marginal_coefficients, mean_bracket_k, phi_psi, pre_average, psi,
    psi_orbit_average, tabulate_reduced,
)
from flatham.errors import EllipticityViolation, OnBoundary
from flatham.flow import _trace_period, discretize_orbit, integrate_level_flow
from flatham.model import (Harmonic, ModelSpec, SigmaModel, builtin_specs, harmonic_fields,
                           level_function, mean_drift)

x1sq = lambda p: p[..., 0] ** 2


def test_level_average_examples(radial):
    assert level_average(radial, x1sq, 0.0) == pytest.approx(0.5, abs=1e-8)
    assert level_average(radial, x1sq, 0.5) == pytest.approx(1.125, abs=1e-8)
    assert level_average(radial, lambda p: 0 * p[..., 0] + 3.7, 0.3) == pytest.approx(3.7, abs=1e-12)


def test_level_average_is_flow_time_average(specs):
    spec = specs["elliptic"]
    f = lambda p: np.sin(p[..., 0]) + p[..., 1] ** 2
    h = 0.4
    o = discretize_orbit(spec, h, 1024)
    assert level_average(spec, f, h) == pytest.approx(float(np.mean(f(o.points))), abs=1e-10)


def test_pre_average(radial):
    f = x1sq
    x_in = np.array([0.3, 0.1])
    assert pre_average(radial, f, x_in) == pytest.approx(0.09)
    x_out = np.array([0.0, 1.6])
    assert pre_average(radial, f, x_out) == pytest.approx(1.6**2 / 2, abs=1e-8)
    with pytest.raises(OnBoundary):
        pre_average(radial, f, np.array([1.0, 0.0]))
    c = lambda p: 2.0 + 0 * p[..., 0]
    assert pre_average(radial, c, x_in) == 2.0
    assert pre_average(radial, c, x_out) == pytest.approx(2.0, abs=1e-12)


def test_phi_psi_examples(radial):
    c = radial.with_(harmonics=(Harmonic(1, "uniform_x", 1.3),))
    x = np.array([1.2, 0.7])
    gK = level_function(c, x)[1]
    assert phi_psi(c, x, math.pi / 2) == pytest.approx(1.3 * gK[0])
    assert phi_psi(c, x, 0.0) == 0.0
    osc = builtin_specs()["radial_osc"]
    assert phi_psi(osc, x, 2 * math.pi) == pytest.approx(0.0, abs=1e-14)


@given(st.floats(-1.8, 1.8), st.floats(-1.8, 1.8), st.floats(0, 2 * math.pi))
def test_phi_psi_is_antiderivative(a, b, t):
    spec = builtin_specs()["elliptic"]
    x = np.array([a, b])
    h = 1e-5
    d = (phi_psi(spec, x, t + h) - phi_psi(spec, x, t - h)) / (2 * h)
    assert d == pytest.approx(psi(spec, x, t), abs=1e-7)


@given(st.floats(-1.8, 1.8), st.floats(-1.8, 1.8), st.floats(0, 2 * math.pi))
def test_grad_phi_psi_matches_fd(a, b, t):
    spec = builtin_specs()["radial_mixed"]
    x = np.array([a, b])
    if np.linalg.norm(x) < 0.55:
        return  # blend region: the Hessian of K is only C⁰ at the origin
    g = grad_phi_psi(spec, x, t)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (phi_psi(spec, x + e, t) - phi_psi(spec, x - e, t)) / (2 * h)
        assert g[i] == pytest.approx(fd, abs=1e-6)


def test_drift_correction_examples(radial, rng):
    x = rng.uniform(-1.5, 1.5, (10, 2))
    assert np.all(drift_correction(radial, x) == 0)
    only_cos = radial.with_(harmonics=(Harmonic(1, "shear", 0.8, "cos"),))
    assert np.max(np.abs(drift_correction(only_cos, x, 1024))) <= 1e-12


def _symbolic(spec, x):
    c, _, s, _ = harmonic_fields(spec, x)[1]
    _, gA, _, gB = _psi_parts(spec, x)[1]
    return (0.5 * np.sum(gA * s, -1) - 0.5 * np.sum(gB * c, -1)
            + np.sum(gB * mean_drift(spec, x), -1))


def test_drift_correction_two_harmonics(specs, rng):
    for spec in (specs["elliptic"], specs["radial_mixed"],
                 ModelSpec(harmonics=(Harmonic(1, "saddle", 0.7, "cos"), Harmonic(1, "quadratic", 0.4, "sin")))):
        x = rng.uniform(-1.4, 1.4, (10, 2))
        q = drift_correction(spec, x, 1024)
        np.testing.assert_allclose(q, _symbolic(spec, x), atol=1e-9, rtol=0)


def test_psi_orbit_average(radial, specs):
    x = np.array([1.5, 0.0])
    const = lambda p: 2.0 + 0 * p[..., 0]
    assert psi_orbit_average(radial, const, x) == pytest.approx(2.0 * 2 * math.pi * 1.5 / 2, rel=1e-10)
    spec = specs["elliptic"]
    f = lambda p: p[..., 0] * p[..., 1] + p[..., 0]
    x = np.array([0.0, 1.3])
    period, _ = _trace_period(spec, x)
    a = psi_orbit_average(spec, f, x)
    b = psi_orbit_average(spec, f, integrate_level_flow(spec, x, period))
    assert a == pytest.approx(b, abs=1e-6)


def test_psi_derivative_identity(specs, rng):
    """d/dt Ψ_f(φ_t x) = f(φ_t x) − A_K f."""
    spec = specs["elliptic"]
    f = lambda p: np.cos(p[..., 0]) * p[..., 1] + 0.3 * p[..., 0] ** 2
    for _ in range(20):
        h = rng.uniform(0.1, 0.9)
        x = discretize_orbit(spec, h, 64).at_fraction(rng.uniform())
        from flatham.flow import project_to_level

        x = project_to_level(spec, x, h)
        t = rng.uniform(0, 3)
        dt = 1e-3
        plus = psi_orbit_average(spec, f, integrate_level_flow(spec, x, t + dt))
        minus = psi_orbit_average(spec, f, integrate_level_flow(spec, x, t - dt))
        lhs = (plus - minus) / (2 * dt)
        rhs = float(f(integrate_level_flow(spec, x, t))) - level_average(spec, f, h, 1024)
        assert lhs == pytest.approx(rhs, abs=1e-5)


def test_tabulate_radial_closed_forms(radial_table):
    h = radial_table.h_grid
    np.testing.assert_allclose(radial_table.sigma2_bar, 1.0, atol=1e-8)
    np.testing.assert_allclose(radial_table.b_bar, 1 / (2 * (1 + h)), atol=1e-6)
    assert radial_table.h_min == pytest.approx(1e-3)


def test_tabulate_examples(radial):
    grid = np.array([0.2, 0.5, 0.8])
    t = tabulate_reduced(radial.with_(sigma=SigmaModel("constant", matrix=((math.sqrt(2), 0), (0, math.sqrt(2))))), grid)
    np.testing.assert_allclose(t.sigma2_bar, 2.0, atol=1e-12)
    osc = tabulate_reduced(builtin_specs()["radial_osc"], grid)
    np.testing.assert_allclose(osc.sigma2_bar, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        tabulate_reduced(radial, np.array([0.0, 0.5]))


def test_grid_convergence(specs):
    spec = specs["elliptic"]
    grid = np.array([0.1, 0.5, 0.9])
    a = tabulate_reduced(spec, grid, n_points=256)
    b = tabulate_reduced(spec, grid, n_points=512)
    assert np.max(np.abs(a.b_bar - b.b_bar)) <= 1e-6
    assert np.max(np.abs(a.sigma2_bar - b.sigma2_bar)) <= 1e-6


def test_bracket_consistency_identity_gamma(specs):
    spec = specs["radial_osc"]
    for h in (0.2, 0.7):
        a = level_average(spec, lambda p: mean_bracket_k(spec, p), h)
        b = level_average(spec, lambda p: np.sum(level_function(spec, p)[1] ** 2, -1), h)
        assert a == pytest.approx(b, abs=1e-10)


def test_extrapolation_to_boundary(specs):
    for name in ("radial", "elliptic", "radial_aniso"):
        spec = specs[name]
        t = tabulate_reduced(spec)
        s0 = float(t.diffusion(0.0))
        assert s0 == pytest.approx(boundary_diffusion(spec), rel=0.01)


def test_table_invariants():
    with pytest.raises(EllipticityViolation):
        ReducedCoefficientTable(np.array([0.1, 0.2]), np.zeros(2), np.array([1.0, -1.0]), 1.0, 0.1)
    with pytest.raises(ValueError):
        ReducedCoefficientTable(np.array([0.2, 0.1]), np.zeros(2), np.ones(2), 1.0, 0.1)
    lin = ReducedCoefficientTable(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0]), np.ones(3), 1.0,
                                  0.1, "linear")
    assert float(lin.drift(0.0)) == pytest.approx(0.0)
    assert float(lin.drift(0.25)) == pytest.approx(2.5)


def test_negative_levels_continue_smoothly(radial):
    b_in, a_in = marginal_coefficients(radial, -0.05)
    assert a_in == pytest.approx(1.0, abs=1e-12)
    assert b_in == pytest.approx(1 / (2 * 0.95), abs=1e-9)
