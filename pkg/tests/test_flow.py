import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flatham.errors import LeftCollar
from flatham.flow import (beta_level, build_collar_chart, diffusion_weight, discretize_orbit,
                          integrate_level_flow, point_on_level, transversal_flow)
from flatham.model import level_function, perp


@pytest.fixture(scope="module")
def radial_chart(radial):
    return build_collar_chart(radial, n_s=21)


@pytest.fixture(scope="module")
def elliptic_chart(specs):
    return build_collar_chart(specs["elliptic"])


def test_quarter_period_radial(radial):
    h = 0.3
    orbit = discretize_orbit(radial, h, 64)
    assert orbit.period == pytest.approx(2 * math.pi * (1 + h), abs=1e-6)
    p = integrate_level_flow(radial, np.array([1 + h, 0.0]), orbit.period / 4)
    # clockwise: a quarter turn lands on the negative x2 axis
    np.testing.assert_allclose(p, [0.0, -(1 + h)], atol=1e-8)
    x = np.array([0.3, 1.4])
    np.testing.assert_array_equal(integrate_level_flow(radial, x, 0.0), x)


def test_k_conservation(specs):
    for spec in specs.values():
        for h in (0.1, 0.6, 1.0):
            x = point_on_level(spec, h, np.array([0.6, 0.8]))
            orbit = discretize_orbit(spec, h, 32)
            y = integrate_level_flow(spec, x, 3 * orbit.period)
            assert abs(float(level_function(spec, y)[0]) - h) <= 1e-8
    r = specs["radial"]
    y = integrate_level_flow(r, np.array([1.5, 0.0]), 10.0)
    assert abs(float(level_function(r, y)[0]) - 0.5) <= 1e-9


def test_orbit_invariants(specs):
    for spec in specs.values():
        for h in np.linspace(0.1, spec.k_star, 5):
            o = discretize_orbit(spec, h, 256)
            assert np.max(np.abs(level_function(spec, o.points)[0] - h)) <= 1e-8
            back = integrate_level_flow(spec, o.points[0], o.period)
            assert np.linalg.norm(back - o.points[0]) <= 1e-6
    r = specs["radial"]
    o = discretize_orbit(r, 0.5, 256)
    assert o.circumference == pytest.approx(2 * math.pi * 1.5, abs=1e-5)
    assert discretize_orbit(r, 1e-6, 64).period == pytest.approx(2 * math.pi, abs=1e-5)
    assert discretize_orbit(r, -0.2, 64).period == pytest.approx(2 * math.pi * 0.8, abs=1e-6)


def test_transversal_flow(radial, specs):
    np.testing.assert_allclose(transversal_flow(radial, np.array([1.0, 0.0]), 0.2), [1.2, 0.0], atol=1e-10)
    x = np.array([0.2, 0.95])
    np.testing.assert_array_equal(transversal_flow(radial, x, 0.0), x)
    with pytest.raises(LeftCollar):
        transversal_flow(radial, np.array([1.0, 0.0]), 0.5)
    e = specs["elliptic"]
    x = point_on_level(e, -0.1, np.array([1.0, 1.0]))
    for t in (0.05, 0.1, 0.3):
        y = transversal_flow(e, x, t)
        assert float(level_function(e, y)[0]) - (-0.1) == pytest.approx(t, abs=1e-8)


@given(st.floats(0.0, 2 * math.pi), st.floats(-0.35, 0.35), st.floats(0.0, 0.3))
def test_transversal_increment_property(angle, k0, t):
    from flatham.model import builtin_specs

    spec = builtin_specs()["elliptic"]
    x = point_on_level(spec, k0, np.array([math.cos(angle), math.sin(angle)]))
    if abs(k0 + t) >= spec.collar_a:
        return
    y = transversal_flow(spec, x, t)
    assert float(level_function(spec, y)[0]) - k0 == pytest.approx(t, abs=1e-8)


def test_radial_chart(radial, radial_chart):
    c = radial_chart
    for s in (-0.3, 0.0, 0.2):
        assert float(c.beta(s)) == pytest.approx(2 * math.pi * (1 + s), abs=1e-6)
        assert beta_level(radial, s) == pytest.approx(2 * math.pi * (1 + s), abs=1e-8)
    assert float(c.theta(c.x_star)) == pytest.approx(0.0, abs=1e-9)
    x = np.array([1.2, 0.0])
    for t in (0.5, 1.0, 3.0):
        y = integrate_level_flow(radial, x, t)
        assert float(c.theta(y)) == pytest.approx(t, abs=1e-6)


def test_chart_wraps_and_range(elliptic_chart, specs):
    spec = specs["elliptic"]
    c = elliptic_chart
    for s in (-0.2, 0.15):
        x = point_on_level(spec, s, np.array([-0.3, 1.0]))
        per = discretize_orbit(spec, s, 32).period
        th0 = float(c.theta(x))
        th1 = float(c.theta(integrate_level_flow(spec, x, per)))
        beta = float(c.beta(s))
        d = (th1 - th0) % beta
        assert min(d, beta - d) <= 1e-6
        assert 0.0 <= th0 < beta


def test_chart_identity(elliptic_chart, specs, rng):
    """(∇Θ, ∇⊥K) equals the diffusion weight inside the collar."""
    spec = specs["elliptic"]
    c = elliptic_chart
    h = 1e-4
    errs = []
    for _ in range(50):
        s = rng.uniform(-0.3, 0.3)
        x = point_on_level(spec, s, rng.normal(size=2))
        g = np.array([(c.theta(x + e) - c.theta(x - e)) / (2 * h) for e in np.eye(2) * h])
        lhs = float(np.dot(g, perp(level_function(spec, x)[1])))
        errs.append(abs(lhs - float(diffusion_weight(spec, x))))
    assert max(errs) <= 1e-4


def test_chart_requires_boundary_point(radial):
    with pytest.raises(ValueError):
        build_collar_chart(radial, x_star=np.array([1.1, 0.0]), n_s=5)
