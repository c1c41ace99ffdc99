import numpy as np
import pytest

from mtd_sim.errors import DimensionError
from mtd_sim.lqg import (ControllerGains, CostSpec, EstimatorGains, FilterState, control_input,
                         control_residual, estimation_residual, evaluate_cost, kf_step, kf_update,
                         solve_control_dare, solve_estimation_dare)
from mtd_sim.plant import StateSpaceModel

from conftest import random_spd, random_stable

PHI = (1.0 + np.sqrt(5.0)) / 2.0


def scalar(a, b, c, q, r):
    return StateSpaceModel([[a]], [[b]], [[c]], [[q]], [[r]])


def random_model(rng, n=3, p=2, m=2):
    return StateSpaceModel(random_stable(rng, n, 1.1), rng.standard_normal((n, p)),
                           rng.standard_normal((m, n)), random_spd(rng, n), random_spd(rng, m))


def test_estimation_dare_zero_dynamics():
    g = solve_estimation_dare(scalar(0.0, 1.0, 1.0, 2.0, 2.0))
    assert g.P == pytest.approx(np.array([[2.0]]))
    assert g.K == pytest.approx(np.array([[0.5]]))


def test_golden_ratio_fixed_points():
    # p = 1 + p - p^2/(p+1)  ->  p^2 = p + 1
    g = solve_estimation_dare(scalar(1.0, 1.0, 1.0, 1.0, 1.0))
    assert g.P[0, 0] == pytest.approx(PHI, abs=1e-3)
    assert g.K[0, 0] == pytest.approx(PHI - 1.0, abs=1e-3)
    c = solve_control_dare(scalar(1.0, 1.0, 1.0, 1.0, 1.0), CostSpec([[1.0]], [[1.0]]))
    assert c.S[0, 0] == pytest.approx(PHI, abs=1e-3)
    assert c.L[0, 0] == pytest.approx(1.0 - PHI, abs=1e-3)


def test_control_dare_without_input_authority():
    c = solve_control_dare(scalar(0.5, 0.0, 1.0, 1.0, 1.0), CostSpec([[3.0]], [[1.0]]))
    assert c.S == pytest.approx(np.array([[4.0]]))
    assert c.L == pytest.approx(np.array([[0.0]]))


def test_random_residuals_and_symmetry(rng):
    for _ in range(5):
        m = random_model(rng)
        cost = CostSpec(random_spd(rng, 3), random_spd(rng, 2))
        e, c = solve_estimation_dare(m), solve_control_dare(m, cost)
        assert estimation_residual(m, e.P) < 1e-9
        assert control_residual(m, cost, c.S) < 1e-9
        assert np.linalg.norm(e.P - e.P.T) < 1e-12
        assert np.linalg.norm(c.S - c.S.T) < 1e-12
        assert max(abs(np.linalg.eigvals(m.A + m.B @ c.L))) < 1.0
        assert max(abs(np.linalg.eigvals(m.A @ (np.eye(3) - e.K @ m.C)))) < 1.0


def test_control_estimation_duality(rng):
    m = random_model(rng)
    W, U = random_spd(rng, 3), random_spd(rng, 2)
    dual = StateSpaceModel(m.A.T, np.zeros((3, 1)), m.B.T, W, U)
    S = solve_control_dare(m, CostSpec(W, U)).S
    assert np.allclose(S, solve_estimation_dare(dual).P, atol=1e-8)


def test_kf_zero_innovation_and_hand_case():
    m = scalar(1.0, 1.0, 1.0, 1.0, 1.0)
    g = EstimatorGains([[PHI]], [[0.5]])
    filt, _ = kf_step(g, FilterState([3.0]), [3.0], [0.0], m)
    assert np.array_equal(filt.x_hat, [3.0])
    assert kf_update(g, FilterState([0.0]), [2.0], m).x_hat == pytest.approx([1.0])
    with pytest.raises(ValueError):
        kf_update(g, filt, [1.0], m)


def test_kf_beats_best_static_predictor():
    rng = np.random.default_rng(7)
    m = scalar(0.9, 1.0, 1.0, 1.0, 1.0)
    g = solve_estimation_dare(m)
    x, state, xs, ys, xf = 0.0, FilterState([0.0]), [], [], []
    for _ in range(50):
        y = x + rng.standard_normal()
        filt, state = kf_step(g, state, [y], [0.0], m)
        xs.append(x), ys.append(y), xf.append(filt.x_hat[0])
        x = 0.9 * x + rng.standard_normal()
    xs, ys = np.array(xs), np.array(ys)
    # least-squares static gain x ~ c*y fitted with hindsight on the same realization
    c = xs @ ys / (ys @ ys)
    assert np.mean((xs - np.array(xf)) ** 2) <= np.mean((xs - c * ys) ** 2)


def test_control_input_cases(rng):
    g = ControllerGains([[PHI]], [[-0.618]])
    assert control_input(g, [0.0]) == pytest.approx([0.0])
    assert control_input(g, [2.0]) == pytest.approx([-1.236])
    L = rng.standard_normal((2, 3))
    x = rng.standard_normal(3)
    expect = [sum(L[i, j] * x[j] for j in range(3)) for i in range(2)]
    assert np.allclose(control_input(ControllerGains(np.eye(3), L), x), expect, atol=1e-12)
    with pytest.raises(DimensionError):
        control_input(g, [1.0, 2.0])


class _Trace:
    def __init__(self, x, u):
        self.x, self.u = x, u


def test_evaluate_cost_hand_cases():
    cost = CostSpec([[1.0]], [[1.0]])
    assert evaluate_cost(_Trace(np.zeros((3, 1)), np.zeros((3, 1))), cost) == 0.0
    assert evaluate_cost(_Trace([[1.0]], [[2.0]]), cost) == pytest.approx(5.0)


def _closed_loop(m, e, c, T, rng):
    W = rng.multivariate_normal(np.zeros(m.n), m.Q, T)
    V = rng.multivariate_normal(np.zeros(m.m), m.R, T)
    x, state = np.zeros(m.n), FilterState(np.zeros(m.n))
    xs, us, innov = np.empty((T, m.n)), np.empty((T, m.p)), np.empty((T, m.m))
    for k in range(T):
        y = m.C @ x + V[k]
        innov[k] = y - m.C @ state.x_hat
        filt, _ = kf_step(e, state, y, np.zeros(m.p), m)
        u = control_input(c, filt.x_hat)
        state = FilterState(m.A @ filt.x_hat + m.B @ u)
        xs[k], us[k] = x, u
        x = m.A @ x + m.B @ u + W[k]
    return xs, us, innov


def test_lqg_cost_and_innovation_whiteness():
    m = StateSpaceModel([[0.95, 0.1], [0.0, 0.9]], [[0.0], [1.0]], np.eye(2), 0.1 * np.eye(2), 0.1 * np.eye(2))
    cost = CostSpec(np.eye(2), np.eye(1))
    e, c = solve_estimation_dare(m), solve_control_dare(m, cost)
    T = 100_000
    xs, us, innov = _closed_loop(m, e, c, T, np.random.default_rng(0))
    # stationary oracle: tr(S Q) + tr(L'(B'SB + U)L (P - KCP))
    P_f = e.P - e.K @ m.C @ e.P
    J_pred = np.trace(c.S @ m.Q) + np.trace(c.L.T @ (m.B.T @ c.S @ m.B + cost.U) @ c.L @ P_f)
    J = evaluate_cost(_Trace(xs[1000:], us[1000:]), cost)
    assert J == pytest.approx(J_pred, rel=0.05)
    for i in range(m.m):
        s = innov[:, i] - innov[:, i].mean()
        lag1 = s[1:] @ s[:-1] / (s @ s)
        assert abs(lag1) < 3.0 / np.sqrt(T)
