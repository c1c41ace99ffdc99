"""Man-in-the-middle adversary.

The attacker reads every true output and the defender's inputs, and may
bias any sensor channel and add any actuator input. It knows the base model
and gains, the noise covariances and the *distribution* of the moving-target
matrices, never their sampled values. Everything it may use is collected in
an :class:`InfoView`; the strategies here accept nothing else.

Strategies
----------
zero_dyn
    Subtracts its own influence using the base model only.
attack1
    Subtract influence: estimates the bias its inputs caused on every sensor
    with a particle filter and removes it.
attack2
    Estimate expected measurement: sends its particle estimate of what the
    defender's filter predicts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ParticleDegeneracyError
from .moving_target import AugmentedRealization
from .plant import StateSpaceModel

ATTACK1 = "attack1"
ATTACK2 = "attack2"


@dataclass(frozen=True)
class AttackChannels:
    """Actuator injection ``u_a`` and stacked sensor bias ``s_a = [s~_a; s_a]``."""

    u_a: np.ndarray
    s_a: np.ndarray

    @classmethod
    def zero(cls, p, m_bar):
        return cls(np.zeros(p), np.zeros(m_bar))


@dataclass(frozen=True)
class DefenderOracle:
    """Defender filter quantities an analysis may grant the attacker.

    ``P``, ``K`` and ``KC`` are the augmented filter's prediction covariance,
    gain and ``K C_cal`` at the current step. ``C_ext`` is set only in the
    known-sensor-matrix special case.
    """

    P: np.ndarray | None = None
    K: np.ndarray | None = None
    KC: np.ndarray | None = None
    C_ext: np.ndarray | None = None


def _public(value, name):
    if isinstance(value, (AugmentedRealization, DefenderOracle)):
        raise TypeError(f"{name}: the attacker's view cannot hold {type(value).__name__} values")
    return np.array(value, dtype=float)


class InfoView:
    """Everything the attacker knows: public model, public history, own actions.

    Parameters
    ----------
    base : StateSpaceModel
        Base plant ``(A, B, C, Q, R)``.
    K, L : ndarray
        Base Kalman and feedback gains.
    Q_cal, R_cal : ndarray
        Augmented process and sensor covariances.
    target : TargetDistribution or KnownTarget
        Distribution of the moving-target matrices.
    prior_cov : ndarray, optional
        Covariance of the zero-mean start distribution of ``(x_bar, x_hat_bar)``
        (``2d x 2d``) or of ``x_bar`` alone (``d x d``).
    P_init : ndarray, optional
        Public initial covariance of the defender's augmented filter.
    history : int, optional
        Keep at most this many past entries per record (unbounded by default).
    """

    def __init__(self, base: StateSpaceModel, K, L, Q_cal, R_cal, target,
                 prior_cov=None, P_init=None, history=None):
        if not isinstance(base, StateSpaceModel):
            raise TypeError("base must be the base StateSpaceModel")
        self.base = base
        self.K = _public(K, "K")
        self.L = _public(L, "L")
        self.Q_cal = _public(Q_cal, "Q_cal")
        self.R_cal = _public(R_cal, "R_cal")
        if isinstance(target, AugmentedRealization):
            raise TypeError("target must be a distribution, not a sampled realization")
        self.target = target
        self.n_ext = int(target.n_ext) if target is not None else 0
        self.m_ext = int(target.m_ext) if target is not None else 0
        self.prior_cov = None if prior_cov is None else _public(prior_cov, "prior_cov")
        self.P_init = None if P_init is None else _public(P_init, "P_init")
        if self.Q_cal.shape != (self.d, self.d) or self.R_cal.shape != (self.m_bar, self.m_bar):
            raise DimensionError(
                f"Q_cal{self.Q_cal.shape}/R_cal{self.R_cal.shape} do not match d={self.d}, m_bar={self.m_bar}"
            )
        self._q_factor = np.linalg.cholesky(self.Q_cal)
        self._r_inv_factor = np.linalg.inv(np.linalg.cholesky(self.R_cal))
        self.y_true = deque(maxlen=history)
        self.u = deque(maxlen=history)
        self.u_a = deque(maxlen=history)
        self.s_a = deque(maxlen=history)
        self.y_a = deque(maxlen=history)

    @property
    def d(self) -> int:
        return self.n_ext + self.base.n

    @property
    def m_bar(self) -> int:
        return self.m_ext + self.base.m

    def observe_output(self, y_bar):
        self.y_true.append(_public(y_bar, "y_bar"))

    def observe_input(self, u):
        self.u.append(_public(u, "u"))

    def record_attack(self, u_a, s_a, y_a):
        self.u_a.append(_public(u_a, "u_a"))
        self.s_a.append(_public(s_a, "s_a"))
        self.y_a.append(_public(y_a, "y_a"))


def tamper_measurement(y_bar, channels: AttackChannels) -> np.ndarray:
    return np.asarray(y_bar, dtype=float) + channels.s_a


def tamper_actuation(u, channels: AttackChannels) -> np.ndarray:
    return np.asarray(u, dtype=float) + channels.u_a


def apply_attack(y_bar, u, channels: AttackChannels, view: InfoView | None = None):
    """Man-in-the-middle on both links.

    Returns ``(y_operator, u_plant)``: the operator receives ``y_bar + s_a``
    and the plant receives ``u + u_a``. The true ``y_bar`` and ``u`` are
    appended to ``view``.
    """
    y_bar = np.asarray(y_bar, dtype=float)
    u = np.asarray(u, dtype=float)
    if y_bar.shape != channels.s_a.shape or u.shape != channels.u_a.shape:
        raise DimensionError(
            f"channels u_a{channels.u_a.shape}, s_a{channels.s_a.shape} do not match "
            f"u{u.shape}, y{y_bar.shape}"
        )
    if view is not None:
        view.observe_output(y_bar)
        view.observe_input(u)
    return tamper_measurement(y_bar, channels), tamper_actuation(u, channels)


# --- trivial zero-dynamics attack -------------------------------------------------

@dataclass(frozen=True)
class ZeroDynState:
    x_a: np.ndarray


def zero_dyn_step(state: ZeroDynState, u_a, base: StateSpaceModel):
    """Bias ``-C x_a`` for the current step and the next influence state."""
    u_a = np.asarray(u_a, dtype=float)
    s_a = -(base.C @ state.x_a)
    return ZeroDynState(base.A @ state.x_a + base.B @ u_a), s_a


# --- particle posterior ----------------------------------------------------------

@dataclass(frozen=True)
class ParticleCloud:
    """Weighted samples of the attacker's hidden state.

    ``x`` holds the stacked plant state ``x_bar``; ``aux`` holds the attack
    influence ``x_bar^a`` (attack1) or the defender's prediction ``x_hat_bar``
    (attack2). ``C`` is each particle's extraneous sensor matrix and ``P``
    each particle's copy of the defender covariance (attack2 without oracle).
    ``prev`` stores the stacked ``(x, aux)`` of each particle's parent before
    the last propagation.
    """

    mode: str
    x: np.ndarray
    aux: np.ndarray
    C: np.ndarray
    weights: np.ndarray
    P: np.ndarray | None = None
    oracle_p: bool = True
    known_c: bool = False
    prev: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    @property
    def state(self) -> np.ndarray:
        return np.hstack([self.x, self.aux])

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.state


def _psd_factor(cov):
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _covariance_burn_in(view: InfoView, N, steps, rng):
    """Per-particle samples of the defender covariance after ``steps`` random steps."""
    d, ne = view.d, view.n_ext
    P = np.broadcast_to(view.P_init, (N, d, d)).copy()
    for _ in range(steps):
        A_cal, _, C_cal = _batch_matrices(view, N, rng)
        K = _batch_gain(P, C_cal, view.R_cal)
        P = _batch_covariance(P, K, A_cal, C_cal, view)
    return P


def pf_init(view: InfoView, N: int, mode: str, rng: np.random.Generator, *,
            oracle_p=True, known_c=False, oracle: DefenderOracle | None = None,
            prior_cov=None, burn_in=50) -> ParticleCloud:
    """Particles from the attacker's prior at attack start.

    ``x_bar`` (and ``x_hat_bar`` for attack2) come from the zero-mean
    start distribution with covariance ``prior_cov`` (default
    ``view.prior_cov``); the influence state starts at zero; ``C`` is drawn
    from the target distribution unless known.
    """
    if N < 2:
        raise ValueError(f"need at least 2 particles, got {N}")
    if mode not in (ATTACK1, ATTACK2):
        raise ValueError(f"unknown particle mode {mode!r}")
    d = view.d
    cov = view.prior_cov if prior_cov is None else np.asarray(prior_cov, dtype=float)
    if cov is None:
        raise ValueError("no prior covariance for the attacker's start distribution")
    if mode == ATTACK1:
        cov = cov[:d, :d]
        x = rng.standard_normal((N, d)) @ _psd_factor(cov).T
        aux = np.zeros((N, d))
    else:
        if cov.shape != (2 * d, 2 * d):
            raise DimensionError(f"attack2 prior must be {2 * d}x{2 * d}, got {cov.shape}")
        joint = rng.standard_normal((N, 2 * d)) @ _psd_factor(cov).T
        x, aux = joint[:, :d].copy(), joint[:, d:].copy()
    if known_c:
        if oracle is None or oracle.C_ext is None:
            raise ValueError("known_c requires an oracle carrying C_ext")
        C = np.broadcast_to(oracle.C_ext, (N,) + oracle.C_ext.shape).copy()
    else:
        C = view.target.sample_batch(rng, N)[3]
    P = None
    if mode == ATTACK2 and not oracle_p:
        if view.P_init is None:
            raise ValueError("full covariance tracking requires view.P_init")
        P = _covariance_burn_in(view, N, burn_in, rng)
    return ParticleCloud(mode, x, aux, C, np.full(N, 1.0 / N), P, oracle_p, known_c)


def systematic_resample(weights, rng) -> np.ndarray:
    N = weights.shape[0]
    positions = (rng.random() + np.arange(N)) / N
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def _batch_matrices(view: InfoView, N, rng):
    """Sampled ``A_cal`` (N,d,d), ``B_cal`` (N,d,p) and ``C_ext`` (N,me,ne)."""
    ne, base = view.n_ext, view.base
    A1, A2, Bk, C = view.target.sample_batch(rng, N)
    d = view.d
    A_cal = np.zeros((N, d, d))
    A_cal[:, :ne, :ne] = A1
    A_cal[:, :ne, ne:] = A2
    A_cal[:, ne:, ne:] = base.A
    B_cal = np.empty((N, d, base.p))
    B_cal[:, :ne] = Bk
    B_cal[:, ne:] = base.B
    return A_cal, B_cal, C


def _stack_C(view: InfoView, C_ext):
    """Per-particle block-diagonal ``C_cal`` (N, m_bar, d)."""
    N = C_ext.shape[0]
    out = np.zeros((N, view.m_bar, view.d))
    out[:, :view.m_ext, :view.n_ext] = C_ext
    out[:, view.m_ext:, view.n_ext:] = view.base.C
    return out


def _apply_C(view: InfoView, C_ext, states):
    """``C_cal^(i) s_i`` for every particle without forming ``C_cal``."""
    ne = view.n_ext
    upper = np.einsum("nij,nj->ni", C_ext, states[:, :ne])
    lower = states[:, ne:] @ view.base.C.T
    return np.hstack([upper, lower])


def _batch_gain(P, C_cal, R):
    S = C_cal @ P @ C_cal.transpose(0, 2, 1) + R
    return np.linalg.solve(S, C_cal @ P).transpose(0, 2, 1)


def _batch_covariance(P, K, A_cal, C_cal, view):
    d = view.d
    IKC = np.eye(d) - K @ C_cal
    P_f = IKC @ P @ IKC.transpose(0, 2, 1) + K @ view.R_cal @ K.transpose(0, 2, 1)
    P_n = A_cal @ P_f @ A_cal.transpose(0, 2, 1) + view.Q_cal
    return 0.5 * (P_n + P_n.transpose(0, 2, 1))


def pf_predict(cloud: ParticleCloud, view: InfoView, u, u_a, rng, *, y_a=None,
               oracle: DefenderOracle | None = None) -> ParticleCloud:
    """Propagate every particle through one freshly sampled set of target matrices.

    Resamples first (systematically) when the effective sample size is
    below ``N / 2``. attack2 needs the transmitted measurement ``y_a`` and,
    in oracle mode, the defender's gain through ``oracle``.
    """
    N = cloud.N
    x, aux, C, P, w = cloud.x, cloud.aux, cloud.C, cloud.P, cloud.weights
    if cloud.ess() < 0.5 * N:
        idx = systematic_resample(w, rng)
        x, aux, C = x[idx], aux[idx], C[idx]
        P = None if P is None else P[idx]
        w = np.full(N, 1.0 / N)
    prev = np.hstack([x, aux])
    u = np.asarray(u, dtype=float)
    u_a = np.asarray(u_a, dtype=float)
    A_cal, B_cal, C_next = _batch_matrices(view, N, rng)
    noise = rng.standard_normal((N, view.d)) @ view._q_factor.T
    x_next = np.einsum("nij,nj->ni", A_cal, x) + np.einsum("nij,j->ni", B_cal, u + u_a) + noise
    if cloud.mode == ATTACK1:
        aux_next = np.einsum("nij,nj->ni", A_cal, aux) + np.einsum("nij,j->ni", B_cal, u_a)
        P_next = None
    else:
        if y_a is None:
            raise ValueError("attack2 propagation needs the transmitted measurement y_a")
        y_a = np.asarray(y_a, dtype=float)
        if cloud.oracle_p:
            if oracle is None or oracle.K is None or oracle.KC is None:
                raise ValueError("oracle mode needs the defender gain K and K C")
            v = aux - aux @ oracle.KC.T + oracle.K @ y_a
            P_next = None
        else:
            C_cal = _stack_C(view, C)
            K = _batch_gain(P, C_cal, view.R_cal)
            v = aux - np.einsum("nij,njk,nk->ni", K, C_cal, aux) + K @ y_a
            P_next = _batch_covariance(P, K, A_cal, C_cal, view)
        aux_next = np.einsum("nij,nj->ni", A_cal, v) + np.einsum("nij,j->ni", B_cal, u)
    return replace(cloud, x=x_next, aux=aux_next, C=C_next, P=P_next, weights=w, prev=prev)


def pf_update(cloud: ParticleCloud, view: InfoView, y_bar, *, oracle: DefenderOracle | None = None) -> ParticleCloud:
    """Reweight by the Gaussian likelihood ``N(C_cal x_bar, R_cal)`` of ``y_bar``."""
    C = cloud.C
    if cloud.known_c:
        if oracle is None or oracle.C_ext is None:
            raise ValueError("known_c cloud needs oracle.C_ext")
        C = np.broadcast_to(oracle.C_ext, cloud.C.shape).copy()
    y_bar = np.asarray(y_bar, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite weights raise below
        resid = (y_bar - _apply_C(view, C, cloud.x)) @ view._r_inv_factor.T
        loglik = -0.5 * np.sum(resid**2, axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(cloud.weights) + loglik
    top = np.max(logw)
    if not np.isfinite(top):
        raise ParticleDegeneracyError(float(np.min(loglik)), float(np.max(loglik)))
    w = np.exp(logw - top)
    total = w.sum()
    if not total > 0.0 or not np.isfinite(total):
        raise ParticleDegeneracyError(float(np.min(loglik)), float(np.max(loglik)))
    return replace(cloud, C=C, weights=w / total)


def pf_step(cloud, view, new_y_bar, u, u_a, rng, *, y_a=None, oracle_prev=None, oracle_new=None):
    """Propagate with step-k inputs, then condition on ``new_y_bar`` at k+1."""
    pred = pf_predict(cloud, view, u, u_a, rng, y_a=y_a, oracle=oracle_prev)
    return pf_update(pred, view, new_y_bar, oracle=oracle_new)


def attack1_bias(cloud: ParticleCloud, view: InfoView) -> np.ndarray:
    """``-E[C_cal x_bar^a]`` under the particle posterior."""
    if cloud.mode != ATTACK1:
        raise ValueError(f"attack1_bias needs an attack1 cloud, got {cloud.mode!r}")
    return -(cloud.weights @ _apply_C(view, cloud.C, cloud.aux))


def expected_measurement(cloud: ParticleCloud, view: InfoView) -> np.ndarray:
    """Particle estimate of ``E[C_cal x_hat_bar]``."""
    return cloud.weights @ _apply_C(view, cloud.C, cloud.aux)


def attack2_bias(cloud: ParticleCloud, view: InfoView, y_bar_true) -> np.ndarray:
    """Bias making the transmitted measurement equal ``E[C_cal x_hat_bar]``."""
    if cloud.mode != ATTACK2:
        raise ValueError(f"attack2_bias needs an attack2 cloud, got {cloud.mode!r}")
    return expected_measurement(cloud, view) - np.asarray(y_bar_true, dtype=float)


def expected_quadratic_residue(cloud: ParticleCloud, view: InfoView, y_a, Sigma) -> float:
    """Particle estimate of ``E[z' Sigma z]`` for transmitted measurement ``y_a``."""
    z = np.asarray(y_a, dtype=float) - _apply_C(view, cloud.C, cloud.aux)
    return float(cloud.weights @ np.einsum("ni,ij,nj->n", z, Sigma, z))


# --- strategies driven step by step by the closed loop ---------------------------

class Attack:
    """Protocol: ``bias`` sees the true output at step k, ``advance`` the inputs."""

    name = "none"

    def bias(self, k, y_bar, oracle=None) -> np.ndarray:
        raise NotImplementedError

    def advance(self, k, u, u_a, y_a, oracle=None) -> None:
        pass


class NoAttack(Attack):
    def __init__(self, view: InfoView):
        self.view = view

    def bias(self, k, y_bar, oracle=None):
        return np.zeros(self.view.m_bar)


class ZeroDynamicsAttack(Attack):
    """Cancels its influence on the ordinary sensors only."""

    name = "zero_dyn"

    def __init__(self, view: InfoView):
        self.view = view
        self.state = ZeroDynState(np.zeros(view.base.n))

    def bias(self, k, y_bar, oracle=None):
        s = np.zeros(self.view.m_bar)
        s[self.view.m_ext:] = -(self.view.base.C @ self.state.x_a)
        return s

    def advance(self, k, u, u_a, y_a, oracle=None):
        self.state, _ = zero_dyn_step(self.state, u_a, self.view.base)


class _ParticleAttack(Attack):
    mode = None

    def __init__(self, view: InfoView, n_particles, rng, *, oracle_p=True, known_c=False):
        self.view = view
        self.N = int(n_particles)
        self.rng = rng
        self.oracle_p = oracle_p
        self.known_c = known_c
        self.cloud = None
        self.predicted = None

    def _condition(self, y_bar, oracle):
        if self.cloud is None:
            self.predicted = pf_init(self.view, self.N, self.mode, self.rng, oracle_p=self.oracle_p,
                                     known_c=self.known_c, oracle=oracle)
        else:
            self.predicted = self.cloud
        self.cloud = pf_update(self.predicted, self.view, y_bar, oracle=oracle)

    def advance(self, k, u, u_a, y_a, oracle=None):
        self.cloud = pf_predict(self.cloud, self.view, u, u_a, self.rng, y_a=y_a, oracle=oracle)


class SubtractInfluenceAttack(_ParticleAttack):
    name = mode = ATTACK1

    def bias(self, k, y_bar, oracle=None):
        self._condition(y_bar, oracle)
        return attack1_bias(self.cloud, self.view)


class ExpectedMeasurementAttack(_ParticleAttack):
    name = mode = ATTACK2

    def bias(self, k, y_bar, oracle=None):
        self._condition(y_bar, oracle)
        return attack2_bias(self.cloud, self.view, y_bar)
