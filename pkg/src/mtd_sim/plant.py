"""Base discrete-time LTI plant with Gaussian process and sensor noise.

    x_{k+1} = A x_k + B u_k + w_k,   w_k ~ N(0, Q)
    y_k     = C x_k + v_k,           v_k ~ N(0, R)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DimensionError

RANK_TOL = 1e-8


def _matrix(name, value):
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _vector(name, value, size):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """Plant matrices ``(A, B, C, Q, R)``.

    Construction only checks shapes. Definiteness, detectability and
    stabilizability are reported by :func:`validate_model`.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "Q", "R"):
            object.__setattr__(self, name, _matrix(name, getattr(self, name)))
        n = self.A.shape[0]
        # (expected shape, matrix the expectation comes from)
        expected = {
            "A": ((n, n), "A"),
            "B": ((n, self.B.shape[1]), "A"),
            "C": ((self.C.shape[0], n), "A"),
            "Q": ((n, n), "A"),
            "R": ((self.C.shape[0], self.C.shape[0]), "C"),
        }
        for name, (shape, ref) in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                ref_shape = getattr(self, ref).shape
                raise DimensionError(f"{name} has shape {actual} but {ref} has shape {ref_shape} "
                                     f"(expected {name} of shape {shape})")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        lines = []
        for c in self.checks:
            status = "ok  " if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}" + (f": {c.detail}" if c.detail else ""))
        return "\n".join(lines)


def numerical_rank(M, tol=RANK_TOL) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > tol * max(1.0, s[0])))


def _is_pd(M) -> bool:
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def _pbh(A, M, side, name):
    """PBH rank test over the eigenvalues with modulus >= 1.

    ``side='col'`` stacks ``[lambda I - A; M]`` (observability form),
    ``side='row'`` uses ``[lambda I - A, M]`` (controllability form).
    """
    n = A.shape[0]
    bad = []
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        shifted = lam * np.eye(n) - A
        test = np.vstack([shifted, M]) if side == "col" else np.hstack([shifted, M])
        if numerical_rank(test) < n:
            bad.append(lam)
    if bad:
        lams = ", ".join(_fmt_eig(l) for l in bad)
        return Check(name, False, f"uncontrollable/unobservable unstable eigenvalue(s) {lams}")
    return Check(name, True)


def _fmt_eig(lam):
    lam = complex(lam)
    if abs(lam.imag) < 1e-12:
        return f"{lam.real:g}"
    return f"{lam.real:g}{lam.imag:+g}j"


def validate_model(model: StateSpaceModel) -> ValidationReport:
    """Check the standing assumptions on the plant.

    Detectability of (A, C), stabilizability of (A, B) and (A, Q^{1/2}) via
    PBH tests, and positive definiteness of Q and R.
    """
    checks = [
        Check("Q positive definite", _is_pd(model.Q),
              "" if _is_pd(model.Q) else "Q is not symmetric positive definite"),
        Check("R positive definite", _is_pd(model.R),
              "" if _is_pd(model.R) else "R is not symmetric positive definite"),
        _pbh(model.A, model.C, "col", "detectability (A, C)"),
        _pbh(model.A, model.B, "row", "stabilizability (A, B)"),
    ]
    w, V = np.linalg.eigh(0.5 * (model.Q + model.Q.T))
    q_half = V @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    checks.append(_pbh(model.A, q_half, "row", "stabilizability (A, Q^1/2)"))
    return ValidationReport(tuple(checks))


def simulate_step(model: StateSpaceModel, x, u, w) -> np.ndarray:
    x = _vector("x", x, model.n)
    u = _vector("u", u, model.p)
    w = _vector("w", w, model.n)
    return model.A @ x + model.B @ u + w


def measure(model: StateSpaceModel, x, v) -> np.ndarray:
    x = _vector("x", x, model.n)
    v = _vector("v", v, model.m)
    return model.C @ x + v


@dataclass(frozen=True)
class GaussianSampler:
    """Zero-mean Gaussian noise channel with a fixed covariance."""

    covariance: np.ndarray
    stream_id: int = 0
    cholesky_factor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = _matrix("covariance", self.covariance)
        if cov.shape[0] != cov.shape[1]:
            raise DimensionError(f"covariance must be square, got {cov.shape}")
        if cov.shape[0] == 0:
            factor = np.zeros((0, 0))
        else:
            try:
                factor = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance is not positive definite") from None
        factor.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cholesky_factor", factor)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


def draw_noise(sampler: GaussianSampler, rng: np.random.Generator, size=None) -> np.ndarray:
    """One draw (or ``size`` draws, stacked on axis 0) from ``sampler``."""
    if size is None:
        return sampler.cholesky_factor @ rng.standard_normal(sampler.dim)
    return rng.standard_normal((size, sampler.dim)) @ sampler.cholesky_factor.T


def lyapunov(A, Q) -> np.ndarray:
    """Solution of X = A X A^T + Q for stable A."""
    X = la.solve_discrete_lyapunov(np.asarray(A), np.asarray(Q))
    return 0.5 * (X + X.T)
