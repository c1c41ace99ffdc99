import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtd_sim.errors import DimensionError
from mtd_sim.plant import (GaussianSampler, StateSpaceModel, draw_noise, lyapunov, measure,
                           simulate_step, validate_model)
from mtd_sim.streams import PROCESS, SENSOR, stream_rng

from conftest import random_stable, random_spd


def scalar(a=0.5, b=1.0, c=1.0, q=1.0, r=1.0):
    return StateSpaceModel([[a]], [[b]], [[c]], [[q]], [[r]])


def test_stable_scalar_passes_all_checks():
    report = validate_model(scalar())
    assert report.passed
    assert not report.failures()


def test_unstable_mode_without_input_fails_stabilizability():
    report = validate_model(scalar(a=2.0, b=0.0))
    assert not report["stabilizability (A, B)"].passed
    assert report["detectability (A, C)"].passed


def test_detectability_failure_names_eigenvalue():
    m = StateSpaceModel([[2.0, 0.0], [0.0, 0.5]], np.eye(2), [[0.0, 1.0]], np.eye(2), [[1.0]])
    # hand rank: [2I - A; C] = [[0,0],[0,1.5],[0,1]] has rank 1 < 2
    check = validate_model(m)["detectability (A, C)"]
    assert not check.passed
    assert "2" in check.detail


def test_non_pd_noise_fails():
    report = validate_model(scalar(q=-1.0))
    assert not report["Q positive definite"].passed


def test_dimension_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 2\)"):
        StateSpaceModel(np.eye(2), np.ones((3, 1)), np.eye(2), np.eye(2), np.eye(2))


def test_simulate_step_hand_cases():
    m = StateSpaceModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(2), np.eye(2))
    assert np.array_equal(simulate_step(m, [1, 2], [7.0], [0, 0]), [1.0, 2.0])
    assert simulate_step(scalar(a=0.9), [1.0], [1.0], [0.5]) == pytest.approx([2.4])


def test_measure_hand_cases():
    m = StateSpaceModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.eye(2), np.eye(2))
    assert np.array_equal(measure(m, [3, 4], [0, 0]), [3.0, 4.0])
    m2 = StateSpaceModel(np.eye(2), np.zeros((2, 1)), [[1.0, 1.0]], np.eye(2), [[1.0]])
    assert measure(m2, [1, 2], [-1]) == pytest.approx([2.0])


def _loop_matvec(M, x):
    out = [0.0] * len(M)
    for i in range(len(M)):
        for j in range(len(x)):
            out[i] += M[i][j] * x[j]
    return np.array(out)


def test_random_instance_matches_loop_oracle(rng):
    n, p, m = 4, 2, 3
    model = StateSpaceModel(rng.standard_normal((n, n)), rng.standard_normal((n, p)),
                            rng.standard_normal((m, n)), np.eye(n), np.eye(m))
    x, u, w, v = (rng.standard_normal(k) for k in (n, p, n, m))
    expect = _loop_matvec(model.A.tolist(), x) + _loop_matvec(model.B.tolist(), u) + w
    assert np.allclose(simulate_step(model, x, u, w), expect, atol=1e-12, rtol=0)
    assert np.allclose(measure(model, x, v), _loop_matvec(model.C.tolist(), x) + v, atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31))
def test_step_and_measure_are_linear(a, b, seed):
    r = np.random.default_rng(seed)
    model = StateSpaceModel(r.standard_normal((3, 3)), r.standard_normal((3, 1)),
                            r.standard_normal((2, 3)), np.eye(3), np.eye(2))
    x1, x2 = r.standard_normal(3), r.standard_normal(3)
    u0, w0, v0 = np.zeros(1), np.zeros(3), np.zeros(2)
    lhs = simulate_step(model, a * x1 + b * x2, u0, w0)
    rhs = a * simulate_step(model, x1, u0, w0) + b * simulate_step(model, x2, u0, w0)
    assert np.allclose(lhs, rhs, atol=1e-9)
    lhs = measure(model, a * x1 + b * x2, v0)
    assert np.allclose(lhs, a * measure(model, x1, v0) + b * measure(model, x2, v0), atol=1e-9)


def test_draw_noise_deterministic_and_scalar_factor():
    s = GaussianSampler(np.eye(2))
    assert np.array_equal(draw_noise(s, stream_rng(5, PROCESS)), draw_noise(s, stream_rng(5, PROCESS)))
    s4 = GaussianSampler([[4.0]])
    z = stream_rng(9, SENSOR).standard_normal(1)
    assert draw_noise(s4, stream_rng(9, SENSOR)) == pytest.approx(2.0 * z)


def test_cholesky_factor_reproduces_covariance(rng):
    cov = random_spd(rng, 4)
    L = GaussianSampler(cov).cholesky_factor
    assert np.linalg.norm(L @ L.T - cov) <= 1e-10 * np.linalg.norm(cov)


def test_draw_noise_sample_covariance():
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    X = draw_noise(GaussianSampler(cov), stream_rng(1, PROCESS), size=100_000)
    assert np.linalg.norm(np.cov(X.T) - cov) < 0.05 * np.linalg.norm(cov)


def test_streams_are_independent():
    s = GaussianSampler(np.eye(2))
    a = draw_noise(s, stream_rng(3, PROCESS), size=100_000)
    b = draw_noise(s, stream_rng(3, SENSOR), size=100_000)
    cross = a.T @ b / len(a)
    assert np.max(np.abs(cross)) < 4.0 / np.sqrt(len(a))


def test_empirical_covariance_matches_lyapunov(rng):
    A = random_stable(rng, 2, 0.8)
    Q = random_spd(rng, 2)
    model = StateSpaceModel(A, np.zeros((2, 1)), np.eye(2), Q, np.eye(2))
    # independent oracle: plain fixed-point of X = A X A' + Q
    X = Q.copy()
    for _ in range(2000):
        X = A @ X @ A.T + Q
    assert np.allclose(lyapunov(A, Q), X, atol=1e-10)
    # simulate 10^5 steps
    W = draw_noise(GaussianSampler(Q), stream_rng(2, PROCESS), size=100_000)
    x = np.zeros(2)
    xs = np.empty_like(W)
    for k in range(len(W)):
        x = simulate_step(model, x, [0.0], W[k])
        xs[k] = x
    emp = xs[1000:].T @ xs[1000:] / len(xs[1000:])
    assert np.linalg.norm(emp - X) < 0.10 * np.linalg.norm(X)
