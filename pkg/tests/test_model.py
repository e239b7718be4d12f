import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flatham.errors import DerivativeUnavailable, ModelError, NonPeriodicInput
from flatham.model import (
    Harmonic, ModelSpec, SigmaModel, TestFunction, bracket_apply, drift, eval_coefficients,
    eval_hamiltonian, generator_apply, level_function, level_test_function, mean_drift, perp,
    time_average,
)

coord = st.floats(-2.0, 2.0, allow_nan=False)


def test_hamiltonian_examples(radial):
    H, gH, K, gK = eval_hamiltonian(radial, np.array([2.0, 0.0]))
    assert H == pytest.approx(1.0) and K == pytest.approx(1.0)
    H, gH, K, _ = eval_hamiltonian(radial, np.array([0.5, 0.0]))
    assert H == 0 and np.all(gH == 0)
    H, gH, K, gK = eval_hamiltonian(radial, np.array([1.0, 0.0]))
    assert H == 0 and K == 0 and np.all(gH == 0)
    np.testing.assert_allclose(gK, [1.0, 0.0])


def test_coefficient_examples(radial):
    x = np.array([2.0, 0.0])
    b, s, g = eval_coefficients(radial, x, 0.7)
    np.testing.assert_allclose(b, perp(eval_hamiltonian(radial, x)[1]))
    np.testing.assert_allclose(b, [0.0, -3.0])
    np.testing.assert_allclose(g, np.eye(2))
    one = radial.with_(harmonics=(Harmonic(1, "uniform_x", 2.0),))
    np.testing.assert_allclose(drift(one, x, math.pi / 2), mean_drift(one, x), atol=1e-15)


def test_time_average_examples(radial):
    x = np.array([0.3, -1.2])
    assert time_average(lambda x, t: math.cos(t) * x[0], x, 16) == pytest.approx(0.0, abs=1e-15)
    assert time_average(lambda x, t: math.sin(t) ** 2, x, 16) == pytest.approx(0.5)
    with pytest.raises(NonPeriodicInput):
        time_average(lambda x, t: t, x, 16)
    with pytest.raises(ValueError):
        time_average(lambda x, t: 1.0, x, 1)


def test_generator_and_bracket_examples(radial):
    quad = TestFunction(lambda x: x[..., 0] ** 2 + x[..., 1] ** 2)
    x = np.array([0.4, 1.7])
    assert generator_apply(radial, quad, x, 0.0) == pytest.approx(2.0, rel=1e-6)
    K = level_test_function(radial)
    r = 1.7
    p = np.array([r * math.cos(0.3), r * math.sin(0.3)])
    assert generator_apply(radial, K, p, 1.0) == pytest.approx(0.5 / r, rel=1e-12)
    assert bracket_apply(radial, K, K, p, 1.0) == pytest.approx(1.0, rel=1e-12)
    affine = TestFunction(lambda x: 3 * x[..., 0] - x[..., 1] + 2)
    assert generator_apply(radial, affine, x, 0.0) == pytest.approx(0.0, abs=1e-5)
    const = TestFunction(lambda x: 5.0 + 0 * x[..., 0])
    assert bracket_apply(radial, const, K, p, 0.0) == pytest.approx(0.0, abs=1e-9)
    # γ = diag(2, 0) is not elliptic, so patch σ into a degenerate-mode spec
    degenerate = ModelSpec(sigma=SigmaModel("zero"))
    object.__setattr__(degenerate, "sigma", SigmaModel("constant", matrix=((math.sqrt(2), 0.0), (0.0, 0.0))))
    x1 = TestFunction(lambda x: x[..., 0])
    assert bracket_apply(degenerate, x1, x1, x, 0.0) == pytest.approx(2.0, rel=1e-8)


def test_derivative_unavailable(radial):
    f = TestFunction(lambda x: x[..., 0], fd_step=None)
    with pytest.raises(DerivativeUnavailable):
        generator_apply(radial, f, np.array([1.0, 1.0]), 0.0)
    with pytest.raises(DerivativeUnavailable):
        bracket_apply(radial, f, f, np.array([1.0, 1.0]), 0.0)


def test_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec(n=2)
    with pytest.raises(ModelError):
        ModelSpec(family="torus")
    with pytest.raises(ModelError):
        ModelSpec(sigma=SigmaModel("constant", matrix=((1.0, 0.0), (0.0, 0.0))))
    with pytest.raises(ModelError):
        Harmonic(0, "uniform_x")
    with pytest.raises(ModelError):
        Harmonic(1, "nope")
    assert ModelSpec().collar_a == pytest.approx(0.4)
    assert ModelSpec(h_star=8.0).k_star == pytest.approx(2.0)
    # degenerate test mode is exempt from the ellipticity check
    ModelSpec(sigma=SigmaModel("zero"))


def test_mean_drift_identity_all_specs(specs):
    g = np.linspace(-1.9, 1.9, 32)
    pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    for spec in specs.values():
        mb = time_average(lambda x, t: drift(spec, x, t), pts, 256)
        assert np.max(np.abs(mb - mean_drift(spec, pts))) <= 1e-10


def test_analytic_derivatives_match_fd(specs, rng):
    for spec in specs.values():
        x = rng.uniform(-1.8, 1.8, (40, 2))
        x = x[np.linalg.norm(x, axis=1) > 0.1]
        K, g, H = level_function(spec, x)
        h = 1e-5
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (level_function(spec, x + e)[0] - level_function(spec, x - e)[0]) / (2 * h)
            np.testing.assert_allclose(g[:, i], fd, atol=1e-8)
            fdg = (level_function(spec, x + e)[1] - level_function(spec, x - e)[1]) / (2 * h)
            np.testing.assert_allclose(H[:, :, i], fdg, atol=2e-6)


@given(coord, coord)
def test_perp_orthogonal(a, b):
    from flatham.model import builtin_specs

    spec = builtin_specs()["elliptic"]
    g = level_function(spec, np.array([a, b]))[1]
    v = g * perp(g)  # elementwise: exact cancellation
    assert float(v[0] + v[1]) == 0.0


@given(coord, coord, st.floats(0, 2 * math.pi))
def test_gradient_of_h_formula(a, b, t):
    from flatham.model import builtin_specs

    spec = builtin_specs()["radial"]
    x = np.array([a, b])
    H, gH, K, gK = eval_hamiltonian(spec, x)
    if K <= 0:
        assert H == 0 and np.all(gH == 0)
    else:
        np.testing.assert_allclose(gH, spec.n * K ** (spec.n - 1) * gK, rtol=1e-14)
        assert H == pytest.approx(K**spec.n)


@given(st.integers(1, 6), st.floats(-3, 3), coord, coord)
def test_time_average_kills_harmonics(k, amp, a, b):
    x = np.array([a, b])
    val = time_average(lambda x, t: amp * math.cos(k * t) * x[0] + amp * math.sin(k * t), x, 16)
    assert abs(val) <= 1e-12 * (1 + abs(amp))


def test_chain_rule(specs, rng):
    """L(K²) = 2K·LK + ½·2<dK,dK>."""
    for spec in (specs["radial_aniso"], specs["elliptic"]):
        K = level_test_function(spec)
        K2 = TestFunction(lambda x: level_function(spec, x)[0] ** 2)
        for _ in range(10):
            x = rng.uniform(-1.5, 1.5, 2)
            if np.linalg.norm(x) < 0.2:
                continue
            t = rng.uniform(0, 2 * math.pi)
            lhs = generator_apply(spec, K2, x, t)
            k = float(level_function(spec, x)[0])
            rhs = 2 * k * generator_apply(spec, K, x, t) + bracket_apply(spec, K, K, x, t)
            assert lhs == pytest.approx(rhs, abs=1e-4)


def test_h_is_c1_across_boundary(radial):
    # |∇H| ≤ C |K|^{n-1}: the ratio stays bounded as K ↓ 0
    ks = 10.0 ** -np.arange(1, 6)
    pts = np.stack([1 + ks, 0 * ks], axis=-1)
    gH = np.linalg.norm(eval_hamiltonian(radial, pts)[1], axis=-1)
    ratio = gH / ks ** (radial.n - 1)
    assert np.all(ratio <= 3.0 + 1e-9)
    assert gH[-1] < 1e-9


def test_statedep_sigma(specs):
    s = specs["elliptic"].sigma
    x = np.array([[0.5, 0.2]])
    np.testing.assert_allclose(s(x, 0.0)[0], [[1.05, 0.1], [0.0, 0.9]])
