"""Steady-state Kalman filter, LQR gain and the quadratic LQG cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DareDivergenceError, DimensionError
from .plant import StateSpaceModel, _matrix, _vector

DARE_TOL = 1e-12
DARE_MAX_ITER = 10**6


def _sym(M):
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class CostSpec:
    """State weight ``W`` and input weight ``U`` of the quadratic cost."""

    W: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        for name in ("W", "U"):
            M = _matrix(name, getattr(self, name))
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"{name} must be square, got {M.shape}")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
            object.__setattr__(self, name, M)


@dataclass(frozen=True)
class EstimatorGains:
    P: np.ndarray  # one-step prediction error covariance
    K: np.ndarray
    P_filtered: np.ndarray | None = None  # P - K C P

    def __post_init__(self):
        object.__setattr__(self, "P", _matrix("P", self.P))
        object.__setattr__(self, "K", _matrix("K", self.K))
        if self.P_filtered is not None:
            object.__setattr__(self, "P_filtered", _matrix("P_filtered", self.P_filtered))


@dataclass(frozen=True)
class ControllerGains:
    S: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", _matrix("S", self.S))
        object.__setattr__(self, "L", _matrix("L", self.L))


def _fixed_point(step, X0, tol, max_iter, what):
    X = _sym(np.array(X0, dtype=float))
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            X_next = step(X)
        delta = np.linalg.norm(X_next - X)
        X = X_next
        if delta < tol * (1.0 + np.linalg.norm(X)):
            return X
        if not np.all(np.isfinite(X)):
            break
    resid = float(np.linalg.norm(step(X) - X)) if np.all(np.isfinite(X)) else float("inf")
    raise DareDivergenceError(f"{what} Riccati iteration did not converge", resid)


def estimation_riccati_map(model: StateSpaceModel, P):
    """One application of P -> A P A' + Q - A P C' (C P C' + R)^-1 C P A'."""
    A, C = model.A, model.C
    S = C @ P @ C.T + model.R
    cf = la.cho_factor(S)
    K = la.cho_solve(cf, C @ P).T
    return _sym(A @ (P - K @ C @ P) @ A.T + model.Q), K


def control_riccati_map(model: StateSpaceModel, cost: CostSpec, S):
    """One application of S -> A' S A + W - A' S B (B' S B + U)^-1 B' S A."""
    A, B = model.A, model.B
    G = B.T @ S @ B + cost.U
    cf = la.cho_factor(G)
    gain = la.cho_solve(cf, B.T @ S @ A)  # (B'SB+U)^-1 B'SA
    return _sym(A.T @ S @ A + cost.W - A.T @ S @ B @ gain), -gain


def solve_estimation_dare(model: StateSpaceModel, *, tol=DARE_TOL, max_iter=DARE_MAX_ITER) -> EstimatorGains:
    """Steady-state prediction covariance and Kalman gain by fixed-point iteration.

    Iterates the Riccati map from ``P = Q`` until the Frobenius step falls
    below ``tol * (1 + ||P||)``.
    """
    P = _fixed_point(lambda X: estimation_riccati_map(model, X)[0], model.Q, tol, max_iter, "estimation")
    S = model.C @ P @ model.C.T + model.R
    K = la.cho_solve(la.cho_factor(S), model.C @ P).T
    return EstimatorGains(P, K, _sym(P - K @ model.C @ P))


def solve_control_dare(model: StateSpaceModel, cost: CostSpec, *, tol=DARE_TOL, max_iter=DARE_MAX_ITER) -> ControllerGains:
    """Control Riccati solution ``S`` and feedback ``L = -(B'SB+U)^-1 B'SA``."""
    if cost.W.shape != (model.n, model.n) or cost.U.shape != (model.p, model.p):
        raise DimensionError(
            f"cost weights W{cost.W.shape}, U{cost.U.shape} do not match n={model.n}, p={model.p}"
        )
    S = _fixed_point(lambda X: control_riccati_map(model, cost, X)[0], cost.W, tol, max_iter, "control")
    _, L = control_riccati_map(model, cost, S)
    return ControllerGains(S, L)


def estimation_residual(model, P) -> float:
    return float(np.linalg.norm(estimation_riccati_map(model, P)[0] - P))


def control_residual(model, cost, S) -> float:
    return float(np.linalg.norm(control_riccati_map(model, cost, S)[0] - S))


PREDICTED = "predicted"
FILTERED = "filtered"


@dataclass(frozen=True)
class FilterState:
    x_hat: np.ndarray
    phase: str = PREDICTED

    def __post_init__(self):
        if self.phase not in (PREDICTED, FILTERED):
            raise ValueError(f"unknown phase {self.phase!r}")
        object.__setattr__(self, "x_hat", np.asarray(self.x_hat, dtype=float))


def kf_update(gains: EstimatorGains, state: FilterState, y, model: StateSpaceModel) -> FilterState:
    """Measurement update x_{k|k} = (I - K C) x_{k|k-1} + K y."""
    if state.phase != PREDICTED:
        raise ValueError("kf_update expects a predicted state")
    y = _vector("y", y, model.m)
    x = state.x_hat
    return FilterState(x + gains.K @ (y - model.C @ x), FILTERED)


def kf_predict(state: FilterState, u, model: StateSpaceModel) -> FilterState:
    """Time update x_{k+1|k} = A x_{k|k} + B u."""
    if state.phase != FILTERED:
        raise ValueError("kf_predict expects a filtered state")
    u = _vector("u", u, model.p)
    return FilterState(model.A @ state.x_hat + model.B @ u, PREDICTED)


def kf_step(gains: EstimatorGains, state: FilterState, y, u, model: StateSpaceModel):
    """Update with ``y`` then predict with ``u``; returns ``(filtered, predicted)``."""
    filt = kf_update(gains, state, y, model)
    return filt, kf_predict(filt, u, model)


def control_input(gains: ControllerGains, x_hat_filtered) -> np.ndarray:
    x = np.asarray(x_hat_filtered, dtype=float)
    if x.shape != (gains.L.shape[1],):
        raise DimensionError(f"x_hat has shape {x.shape}, expected ({gains.L.shape[1]},)")
    return gains.L @ x


def evaluate_cost(trace, cost: CostSpec) -> float:
    """Average of x'Wx + u'Uu over the recorded steps of ``trace``.

    ``trace`` needs ``x`` (steps x n) and ``u`` (steps x p) arrays.
    """
    x = np.atleast_2d(np.asarray(trace.x, dtype=float))
    u = np.atleast_2d(np.asarray(trace.u, dtype=float))
    if x.shape[0] == 0 or x.size == 0:
        raise ValueError("cannot evaluate cost of an empty trace")
    if x.shape[0] != u.shape[0]:
        raise DimensionError(f"trace has {x.shape[0]} states but {u.shape[0]} inputs")
    state_cost = np.einsum("ki,ij,kj->k", x, cost.W, x)
    input_cost = np.einsum("ki,ij,kj->k", u, cost.U, u)
    return float(np.sum(state_cost + input_cost) / x.shape[0])
