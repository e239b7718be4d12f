import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatham.errors import BlowUp, InsufficientPaths
from flatham.fullsim import (PathConfig, estimate_drift_qv, estimate_of, exit_statistics,
                             residence_functional, run_ensemble, simulate_full_path,
                             uniform_on_level)
from flatham.model import SigmaModel, eval_hamiltonian, level_function


@pytest.fixture(scope="module")
def frozen(radial):
    return radial.with_(sigma=SigmaModel("zero"), harmonics=())


def test_path_config_validation():
    with pytest.raises(ValueError):
        PathConfig(epsilon=0.1, t_end=1.0, dt_factor=0.2)
    with pytest.raises(ValueError):
        PathConfig(epsilon=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        PathConfig(epsilon=0.1, t_end=-1.0)
    cfg = PathConfig(epsilon=0.1, t_end=1.0)
    assert cfg.dt == pytest.approx(2e-4)
    assert cfg.n_steps == 5000


def test_deterministic_mode_conserves_k(frozen):
    x0 = uniform_on_level(frozen, 0.2, 0, np.arange(8))
    res = run_ensemble(frozen, x0, PathConfig(epsilon=0.1, t_end=1.0))
    assert np.max(np.abs(res["K"] - 0.2)) <= 1e-3


def test_deterministic_drift_is_first_order_in_dt(frozen):
    x0 = uniform_on_level(frozen, 0.5, 0, np.arange(3))
    errs = [np.max(np.abs(run_ensemble(frozen, x0, PathConfig(epsilon=0.1, t_end=1.0, dt_factor=f))["K"] - 0.5))
            for f in (0.02, 0.01)]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)


def test_single_path_reproducible(radial):
    cfg = PathConfig(epsilon=0.1, t_end=0.2, seed=5, path_index=17, record_stride=10)
    a = simulate_full_path(radial, cfg, x0=(1.3, 0.2))
    b = simulate_full_path(radial, cfg, x0=(1.3, 0.2))
    np.testing.assert_array_equal(a.states, b.states)
    assert a.times[0] == 0.0 and a.times[-1] == pytest.approx(0.2)
    np.testing.assert_array_equal(a.k_values, level_function(radial, a.states)[0])
    c = simulate_full_path(radial, PathConfig(epsilon=0.1, t_end=0.2, seed=5, path_index=18, record_stride=10),
                           x0=(1.3, 0.2))
    assert not np.array_equal(a.states, c.states)
    with pytest.raises(ValueError):
        simulate_full_path(radial, cfg)


def test_ensemble_independent_of_threads_and_batch(specs):
    spec = specs["elliptic"]
    idx = np.arange(40)
    x0 = uniform_on_level(spec, 0.3, 3, idx)
    cfg = PathConfig(epsilon=0.1, t_end=0.3, seed=3)
    one = run_ensemble(spec, x0, cfg, idx, band=0.35, deltas=(0.1,), threads=1)
    many = run_ensemble(spec, x0, cfg, idx, band=0.35, deltas=(0.1,), threads=4)
    for key in ("x", "K", "tau", "exit_time", "occupation"):
        np.testing.assert_array_equal(one[key], many[key])
    part = run_ensemble(spec, x0[10:13], cfg, idx[10:13], band=0.35, deltas=(0.1,))
    np.testing.assert_array_equal(part["x"], one["x"][10:13])
    # path matches the single-path entry point
    single = simulate_full_path(spec, PathConfig(epsilon=0.1, t_end=0.3, seed=3, path_index=11), x0=x0[11])
    np.testing.assert_array_equal(single.states[-1], run_ensemble(spec, x0, cfg, idx)["x"][11])


def test_stopping_correctness(radial):
    n = 200
    idx = np.arange(n)
    x0 = uniform_on_level(radial, radial.k_star - 0.05, 1, idx)
    cfg = PathConfig(epsilon=0.1, t_end=0.2, seed=1)
    res = run_ensemble(radial, x0, cfg, idx, record_stride=1)
    h_star = radial.h_star
    stopped = np.flatnonzero(res["stopped"])
    assert stopped.size > 20
    for i in stopped:
        tr = res["trace"][i]
        j = int(round(res["tau"][i] / cfg.dt))
        H = eval_hamiltonian(radial, tr[: j + 1])[0]
        assert H[j] >= h_star - 1e-12
        assert np.all(H[:j] < h_star)
        # frozen afterwards
        np.testing.assert_array_equal(tr[j:], np.broadcast_to(tr[j], tr[j:].shape))
    # starting outside I stops immediately
    out = run_ensemble(radial, np.array([[radial.k_star + 1.1, 0.0]]), cfg)
    assert out["stopped"][0] and out["tau"][0] == 0.0


def test_gaussian_law_without_drift(radial):
    # inside V with no harmonics the drift vanishes; σ = identity
    n = 10_000
    t = 0.01
    cfg = PathConfig(epsilon=0.1, t_end=t, seed=2)
    res = run_ensemble(radial, np.zeros((n, 2)), cfg)
    x = res["x"]
    assert np.max(np.linalg.norm(x, axis=1)) < 0.5
    for c in range(2):
        v = x[:, c] ** 2 / t
        assert estimate_of(v).within(1.0)
        assert estimate_of(x[:, c]).within(0.0)
    assert estimate_of(x[:, 0] * x[:, 1] / t).within(0.0)


def test_drift_qv_radial_fast(radial):
    drift, qv = estimate_drift_qv(radial, 0.5, 0.05, 2000, 0.1, seed=4)
    assert drift.within(1 / 3)
    assert qv.within(1.0)


def test_drift_qv_sigma_scaling(radial):
    s2 = radial.with_(sigma=SigmaModel("constant", matrix=((math.sqrt(2), 0.0), (0.0, math.sqrt(2)))))
    _, qv = estimate_drift_qv(s2, 0.5, 0.05, 2000, 0.1, seed=4)
    assert qv.within(2.0)


def test_drift_qv_validation(radial):
    with pytest.raises(InsufficientPaths):
        estimate_drift_qv(radial, 0.5, 0.05, 99, 0.1)
    with pytest.raises(ValueError):
        estimate_drift_qv(radial, 0.0, 0.05, 200, 0.1)


def test_residence_zero_when_band_never_entered(frozen):
    cfg = PathConfig(epsilon=0.1, t_end=0.5)
    vals, samples = residence_functional(frozen, np.array([[1.5, 0.0], [0.0, 1.7]]), cfg, (0.1, 0.05))
    assert all(v.value == 0.0 for v in vals.values())
    assert samples.shape == (2, 2)
    with pytest.raises(ValueError):
        residence_functional(frozen, np.array([[1.5, 0.0]]), cfg, (0.0,))


def test_residence_monotone_in_delta(radial):
    cfg = PathConfig(epsilon=0.1, t_end=0.2, seed=6)
    x0 = uniform_on_level(radial, 0.0, 6, np.arange(200))
    vals, samples = residence_functional(radial, x0, cfg, (0.2, 0.1))
    # occupation of the wider band dominates path by path
    assert np.all(samples[:, 0] * 0.2 >= samples[:, 1] * 0.1)
    assert 0 < vals[0.1].value < 2 * cfg.t_end / 0.1


def test_no_exit_on_invariant_boundary(frozen):
    x0 = uniform_on_level(frozen, 0.0, 0, np.arange(4))
    (pin, pout, und), res = exit_statistics(frozen, x0, PathConfig(epsilon=0.05, t_end=0.5), 0.1)
    assert und.value == 1.0 and pin.value == 0.0 and pout.value == 0.0
    assert np.all(np.isnan(res["exit_time"]))


def test_exit_statistics_partition(radial):
    x0 = uniform_on_level(radial, 0.0, 8, np.arange(300))
    (pin, pout, und), res = exit_statistics(radial, x0, PathConfig(epsilon=0.1, t_end=1.0, seed=8), 0.1)
    assert pin.value + pout.value + und.value == pytest.approx(1.0)
    assert und.value == 0.0
    assert 0.35 < pin.value < 0.65
    with pytest.raises(ValueError):
        exit_statistics(radial, x0, PathConfig(epsilon=0.1, t_end=1.0), 0.9)


def test_blowup_detected(radial):
    with pytest.raises(BlowUp):
        run_ensemble(radial, np.array([[1.5, 0.0]]),
                     PathConfig(epsilon=0.1, t_end=0.01, blowup_radius=1.0))


@settings(max_examples=10)
@given(st.integers(0, 2**31 - 1), st.integers(0, 10**6))
def test_reproducible_for_any_seed(seed, index):
    from flatham.model import builtin_specs

    spec = builtin_specs()["radial_osc"]
    cfg = PathConfig(epsilon=0.2, t_end=0.02, seed=seed, path_index=index)
    a = simulate_full_path(spec, cfg, x0=(1.2, -0.4))
    b = simulate_full_path(spec, cfg, x0=(1.2, -0.4))
    np.testing.assert_array_equal(a.states, b.states)
