"""Secret time-varying augmentation, its Kalman filter and the chi-square detector.

The defender appends ``n_ext`` extraneous states driven by the plant state
through random matrices redrawn every step::

    [x~_{k+1}]   [A1_k  A2_k] [x~_k]   [B_k]       [w~_k]
    [x_{k+1} ] = [ 0     A  ] [x_k ] + [ B ] u_k + [w_k ]

    [y~_k]   [C_k  0] [x~_k]   [v~_k]
    [y_k ] = [ 0   C] [x_k ] + [v_k ]

Stacked vectors always put the extraneous block first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from . import streams
from .errors import ConfigError, DimensionError, FilterDivergenceError, RejectionSamplingError
from .plant import StateSpaceModel, _matrix

MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class AugmentedRealization:
    """One step's sampled matrices ``(A1_k, A2_k, B_k, C_k)``."""

    A1: np.ndarray
    A2: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("A1", "A2", "B", "C"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_ext(self) -> int:
        return self.A1.shape[0]

    @property
    def m_ext(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class TargetDistribution:
    """IID zero-mean Gaussian entries for the moving-target matrices.

    ``A1`` is rejection-resampled until its spectral radius is at most
    ``rho_max`` and ``C`` until it has full rank.
    """

    n_ext: int
    m_ext: int
    n: int
    p: int
    a1_scale: float
    a2_scale: float
    b_scale: float
    c_scale: float
    rho_max: float = 0.9
    seed_stream: int = streams.TARGET

    def __post_init__(self):
        if self.n_ext < 1 or self.m_ext < 1:
            raise ConfigError("extraneous dimensions must be at least 1")
        if not 0.0 < self.rho_max < 1.0:
            raise ConfigError(f"rho_max must lie in (0, 1), got {self.rho_max}")
        for name in ("a1_scale", "a2_scale", "b_scale", "c_scale"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def for_model(cls, base: StateSpaceModel, n_ext, m_ext, **scales):
        return cls(n_ext=n_ext, m_ext=m_ext, n=base.n, p=base.p, **scales)

    def sample(self, rng: np.random.Generator) -> AugmentedRealization:
        ne, me = self.n_ext, self.m_ext
        for _ in range(MAX_REJECTIONS):
            A1 = self.a1_scale * rng.standard_normal((ne, ne))
            if np.abs(np.linalg.eigvals(A1)).max() <= self.rho_max:
                break
        else:
            raise RejectionSamplingError(
                f"no A1 sample with spectral radius <= {self.rho_max} in {MAX_REJECTIONS} draws; "
                "a1_scale too large for rho_max"
            )
        A2 = self.a2_scale * rng.standard_normal((ne, self.n))
        B = self.b_scale * rng.standard_normal((ne, self.p))
        full = min(ne, me)
        for _ in range(MAX_REJECTIONS):
            C = self.c_scale * rng.standard_normal((me, ne))
            if np.linalg.matrix_rank(C) == full:
                break
        else:
            raise RejectionSamplingError(f"no full-rank C sample in {MAX_REJECTIONS} draws")
        return AugmentedRealization(A1, A2, B, C)

    def sample_batch(self, rng: np.random.Generator, size: int):
        """``size`` independent draws as stacked arrays ``(A1, A2, B, C)``."""
        ne, me = self.n_ext, self.m_ext
        A1 = self.a1_scale * rng.standard_normal((size, ne, ne))
        bad = np.abs(np.linalg.eigvals(A1)).max(axis=-1) > self.rho_max
        for _ in range(MAX_REJECTIONS):
            if not bad.any():
                break
            idx = np.flatnonzero(bad)
            A1[idx] = self.a1_scale * rng.standard_normal((idx.size, ne, ne))
            bad[idx] = np.abs(np.linalg.eigvals(A1[idx])).max(axis=-1) > self.rho_max
        else:
            raise RejectionSamplingError(
                f"no A1 sample with spectral radius <= {self.rho_max} in {MAX_REJECTIONS} draws"
            )
        A2 = self.a2_scale * rng.standard_normal((size, ne, self.n))
        B = self.b_scale * rng.standard_normal((size, ne, self.p))
        full = min(ne, me)
        C = self.c_scale * rng.standard_normal((size, me, ne))
        bad = np.linalg.matrix_rank(C) != full
        for _ in range(MAX_REJECTIONS):
            if not bad.any():
                break
            idx = np.flatnonzero(bad)
            C[idx] = self.c_scale * rng.standard_normal((idx.size, me, ne))
            bad[idx] = np.linalg.matrix_rank(C[idx]) != full
        else:
            raise RejectionSamplingError(f"no full-rank C sample in {MAX_REJECTIONS} draws")
        return A1, A2, B, C


@dataclass(frozen=True)
class KnownTarget:
    """Degenerate target distribution that always returns the same matrices.

    Models the known-model limit: an attacker holding this object knows the
    augmentation exactly.
    """

    A1: np.ndarray
    A2: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("A1", "A2", "B", "C"):
            object.__setattr__(self, name, _matrix(name, getattr(self, name)))

    @property
    def n_ext(self):
        return self.A1.shape[0]

    @property
    def m_ext(self):
        return self.C.shape[0]

    def sample(self, rng=None) -> AugmentedRealization:
        return AugmentedRealization(self.A1, self.A2, self.B, self.C)

    def sample_batch(self, rng, size):
        tile = lambda M: np.broadcast_to(M, (size,) + M.shape).copy()
        return tile(self.A1), tile(self.A2), tile(self.B), tile(self.C)


def sample_target(dist, rng: np.random.Generator) -> AugmentedRealization:
    return dist.sample(rng)


def _conditional_factor(joint, ext):
    """Gain and Cholesky factor of the extraneous block given the base block."""
    if ext == 0:
        return np.zeros((0, joint.shape[0])), np.zeros((0, 0))
    S11 = joint[:ext, :ext]
    S12 = joint[:ext, ext:]
    S22 = joint[ext:, ext:]
    gain = np.linalg.solve(S22, S12.T).T
    cond = S11 - gain @ S12.T
    return gain, np.linalg.cholesky(0.5 * (cond + cond.T))


@dataclass(frozen=True)
class AugmentedNoiseSpec:
    """Joint process covariance ``Q_cal`` and sensor covariance ``R_cal``.

    Lower-right blocks are the base plant's ``Q`` and ``R``. The extraneous
    noise is drawn conditionally on the base noise so that the base channels
    can be frozen independently of the moving target.
    """

    Q_cal: np.ndarray
    R_cal: np.ndarray
    n_ext: int
    m_ext: int
    _wq: tuple = field(init=False, repr=False, compare=False)
    _wr: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        Q = _matrix("Q_cal", self.Q_cal)
        R = _matrix("R_cal", self.R_cal)
        for name, M in (("Q_cal", Q), ("R_cal", R)):
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"{name} must be square, got {M.shape}")
            try:
                np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                raise ConfigError(f"{name} must be positive definite") from None
        object.__setattr__(self, "Q_cal", Q)
        object.__setattr__(self, "R_cal", R)
        object.__setattr__(self, "_wq", _conditional_factor(Q, self.n_ext))
        object.__setattr__(self, "_wr", _conditional_factor(R, self.m_ext))

    @classmethod
    def default(cls, base: StateSpaceModel, n_ext, m_ext, q_ext=1.0, r_ext=1.0):
        """Block-diagonal covariances ``q_ext I`` and ``r_ext I`` on the extraneous part."""
        Q = np.zeros((n_ext + base.n,) * 2)
        Q[:n_ext, :n_ext] = q_ext * np.eye(n_ext)
        Q[n_ext:, n_ext:] = base.Q
        R = np.zeros((m_ext + base.m,) * 2)
        R[:m_ext, :m_ext] = r_ext * np.eye(m_ext)
        R[m_ext:, m_ext:] = base.R
        return cls(Q, R, n_ext, m_ext)

    def check_base(self, base: StateSpaceModel):
        if self.Q_cal.shape[0] != self.n_ext + base.n or self.R_cal.shape[0] != self.m_ext + base.m:
            raise DimensionError(
                f"noise spec of size Q{self.Q_cal.shape}/R{self.R_cal.shape} does not match "
                f"n_ext={self.n_ext}, n={base.n}, m_ext={self.m_ext}, m={base.m}"
            )
        if not (np.array_equal(self.Q_cal[self.n_ext:, self.n_ext:], base.Q)
                and np.array_equal(self.R_cal[self.m_ext:, self.m_ext:], base.R)):
            raise ConfigError("lower-right noise blocks must equal the base Q and R")

    def extraneous_process(self, w, rng) -> np.ndarray:
        gain, factor = self._wq
        return gain @ w + factor @ rng.standard_normal(self.n_ext)

    def extraneous_sensor(self, v, rng) -> np.ndarray:
        gain, factor = self._wr
        return gain @ v + factor @ rng.standard_normal(self.m_ext)


def assemble(base: StateSpaceModel, real: AugmentedRealization):
    """Stacked ``(A_cal, B_cal, C_cal)`` with the block structure above."""
    ne, me, n, m = real.n_ext, real.m_ext, base.n, base.m
    if real.A2.shape != (ne, n) or real.B.shape != (ne, base.p) or real.C.shape[1] != ne:
        raise DimensionError(
            f"realization blocks A2{real.A2.shape}, B{real.B.shape}, C{real.C.shape} "
            f"do not fit base n={n}, p={base.p}"
        )
    A = np.zeros((ne + n, ne + n))
    A[:ne, :ne] = real.A1
    A[:ne, ne:] = real.A2
    A[ne:, ne:] = base.A
    B = np.empty((ne + n, base.p))
    B[:ne] = real.B
    B[ne:] = base.B
    C = np.zeros((me + m, ne + n))
    C[:me, :ne] = real.C
    C[me:, ne:] = base.C
    return A, B, C


def build_augmented(base: StateSpaceModel, real: AugmentedRealization, noise: AugmentedNoiseSpec) -> StateSpaceModel:
    """One-step augmented model, usable with :func:`mtd_sim.plant.simulate_step`."""
    if noise.n_ext != real.n_ext or noise.m_ext != real.m_ext:
        raise DimensionError(
            f"realization is {real.n_ext}x{real.m_ext} but noise spec is {noise.n_ext}x{noise.m_ext}"
        )
    noise.check_base(base)
    A, B, C = assemble(base, real)
    return StateSpaceModel(A, B, C, noise.Q_cal, noise.R_cal)


def null_realization(base: StateSpaceModel) -> AugmentedRealization:
    """Empty augmentation: the moving target switched off."""
    return AugmentedRealization(np.zeros((0, 0)), np.zeros((0, base.n)),
                                np.zeros((0, base.p)), np.zeros((0, 0)))


@dataclass(frozen=True)
class TvFilterState:
    """Prediction mean and covariance of the augmented filter at step k.

    ``K`` is the gain used on the previous step (``None`` before the first).
    """

    x_pred: np.ndarray
    P: np.ndarray
    K: np.ndarray | None = None


def _innovation_factor(P, C, R, step=None):
    """Innovation covariance and the inverse of its Cholesky factor."""
    S = C @ P @ C.T + R
    try:
        Lc = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise FilterDivergenceError(
            "innovation covariance is not positive definite", np.linalg.cond(S), step
        ) from None
    return S, np.linalg.inv(Lc)


def tv_gain(P, C, R, step=None):
    """Gain ``K = P C' (C P C' + R)^-1`` with the innovation covariance factor."""
    S, Linv = _innovation_factor(P, C, R, step)
    K = P @ C.T @ (Linv.T @ Linv)
    return K, S, Linv


def tv_advance(x_pred, P, K, A, B, C, Q, R, y, u):
    """Filter ``y`` with gain ``K`` and predict one step ahead with input ``u``.

    The covariance update uses the Joseph form and is re-symmetrized.
    """
    x_filt = x_pred + K @ (y - C @ x_pred)
    IKC = np.eye(P.shape[0]) - K @ C
    P_filt = IKC @ P @ IKC.T + K @ R @ K.T
    P_next = A @ P_filt @ A.T + Q
    return A @ x_filt + B @ u, 0.5 * (P_next + P_next.T)


def tv_kalman_step(state: TvFilterState, step_model: StateSpaceModel, y_bar, u_defender) -> TvFilterState:
    """One step of the augmented time-varying Kalman filter.

    ``step_model`` is this step's augmented model from :func:`build_augmented`;
    ``u_defender`` is the defender's own input ``L x^r_{k|k}``.
    """
    A, B, C, Q, R = step_model.A, step_model.B, step_model.C, step_model.Q, step_model.R
    y_bar = np.asarray(y_bar, dtype=float)
    u = np.asarray(u_defender, dtype=float)
    if y_bar.shape != (C.shape[0],) or u.shape != (B.shape[1],):
        raise DimensionError(
            f"measurement {y_bar.shape} / input {u.shape} do not match model "
            f"({C.shape[0]},) / ({B.shape[1]},)"
        )
    K, _, _ = tv_gain(state.P, C, R)
    x_next, P_next = tv_advance(state.x_pred, state.P, K, A, B, C, Q, R, y_bar, u)
    return TvFilterState(x_next, P_next, K)


def residue(y_bar, state: TvFilterState, step_model: StateSpaceModel):
    """Innovation ``z = y_bar - C_cal x_pred`` and its covariance ``C_cal P C_cal' + R_cal``."""
    C = step_model.C
    z = np.asarray(y_bar, dtype=float) - C @ state.x_pred
    P_bar = C @ state.P @ C.T + step_model.R
    return z, 0.5 * (P_bar + P_bar.T)


def chi2_statistic(z, P_bar) -> float:
    """``z' P_bar^-1 z`` through a Cholesky solve."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        return 0.0
    Lc = np.linalg.cholesky(P_bar)
    r = np.linalg.solve(Lc, z)
    return float(r @ r)


def chi2_sf(x, dof) -> float:
    return float(gammaincc(0.5 * dof, 0.5 * x)) if x > 0 else 1.0


def chi2_threshold(alpha: float, dof: int, tol=1e-10) -> float:
    """Threshold ``eta`` with ``P(chi2_dof > eta) = alpha``, by bisection."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if dof < 1:
        raise ValueError(f"dof must be a positive integer, got {dof}")
    lo, hi = 0.0, float(dof)
    while chi2_sf(hi, dof) > alpha:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_sf(mid, dof) > alpha:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float
    dof: int
    eta: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "eta", chi2_threshold(self.alpha, self.dof))


def detect(g: float, cfg: DetectorConfig) -> bool:
    return bool(g > cfg.eta)
