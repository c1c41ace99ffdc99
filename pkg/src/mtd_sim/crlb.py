"""Posterior Cramer-Rao bounds on the attacker's estimation error.

Fisher-information recursions for a hidden sequence ``zeta_k`` observed
through ``y_bar_k``::

    I_{k+1} = J22 - J21 (J11 + I_k)^-1 J12

where ``J11``, ``J12``, ``J22`` are expectations of the negative second
differentials of ``log f(zeta_{k+1} | zeta_k) f(y_{k+1} | zeta_{k+1})``
with respect to ``(zeta_k, zeta_k)``, ``(zeta_k, zeta_{k+1})`` and
``(zeta_{k+1}, zeta_{k+1})``. With predictive weights (posterior at k, fresh
transitions) these are the D terms; with posterior weights at k+1 over
ancestor pairs they are the approximate S terms.

Sequence models expose ``dim`` and ``neg_hessians(prev, curr, ctx)``
returning per-sample ``(J11, J12, J22)`` arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

EIG_FLOOR = 1e-10
FD_STEP = 1e-4
MAX_EXACT_DIM = 8


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _inv_sym(M):
    return _sym(np.linalg.inv(M))


@dataclass(frozen=True)
class FisherState:
    """Information matrix ``I``, its inverse bound ``Z`` and the step index.

    ``floored`` records whether an eigenvalue floor was applied along the
    way; ``se`` is the largest Monte Carlo standard error of the averaged
    second-differential terms in the last step (zero on exact paths).
    """

    I: np.ndarray
    Z: np.ndarray
    k: int = 0
    floored: bool = False
    se: float = 0.0

    @classmethod
    def from_information(cls, I, k=0, floored=False, se=0.0):
        I = _sym(np.asarray(I, dtype=float))
        return cls(I, _inv_sym(I), k, floored, se)

    @classmethod
    def from_covariance(cls, P, k=0):
        P = _sym(np.asarray(P, dtype=float))
        return cls(_inv_sym(P), P, k)


def _floor_eigs(M, floor=EIG_FLOOR):
    w, V = np.linalg.eigh(_sym(M))
    return _sym((V * np.maximum(w, floor)) @ V.T)


def _schur_step(J11, J12, J22, I_prev):
    return _sym(J22 - J12.T @ np.linalg.solve(J11 + I_prev, J12))


# --- finite differences -----------------------------------------------------------

def fd_hessian(fun, X, h=FD_STEP):
    """Central finite-difference Hessians of a vectorized scalar function.

    ``fun`` maps ``(N, d)`` points to ``(N,)`` values; returns ``(N, d, d)``.
    """
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    H = np.empty((N, d, d))
    f0 = fun(X)
    eye = np.eye(d) * h
    for i in range(d):
        fp = fun(X + eye[i])
        fm = fun(X - eye[i])
        H[:, i, i] = (fp - 2.0 * f0 + fm) / h**2
        for j in range(i):
            fpp = fun(X + eye[i] + eye[j])
            fpm = fun(X + eye[i] - eye[j])
            fmp = fun(X - eye[i] + eye[j])
            fmm = fun(X - eye[i] - eye[j])
            H[:, i, j] = H[:, j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h**2)
    return H


# --- static Van Trees bound ---------------------------------------------------------

@dataclass(frozen=True)
class VanTreesResult:
    mse: np.ndarray
    fisher: np.ndarray
    n_samples: int

    @property
    def bound(self):
        return _inv_sym(self.fisher)


def van_trees_bound(sample_joint, estimator, rng, *, neg_hessian=None, log_joint=None, n_samples=100_000):
    """Both sides of ``E[(zeta_hat - zeta)(zeta_hat - zeta)'] >= I^-1``.

    Parameters
    ----------
    sample_joint : callable
        ``sample_joint(rng, n) -> (zeta, y)`` with arrays of shape ``(n, d)``
        and ``(n, q)``.
    estimator : callable
        Maps ``y`` (``(n, q)``) to estimates ``(n, d)``.
    neg_hessian : callable, optional
        ``(zeta, y) -> (n, d, d)`` negative Hessian of ``log f(zeta, y)`` in
        ``zeta``. If omitted, ``log_joint(zeta, y) -> (n,)`` is differentiated
        numerically.
    """
    zeta, y = sample_joint(rng, n_samples)
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    if zeta.shape[0] != n_samples:
        zeta = zeta.reshape(n_samples, -1)
    err = np.asarray(estimator(y), dtype=float).reshape(zeta.shape) - zeta
    mse = err.T @ err / n_samples
    if neg_hessian is not None:
        H = np.asarray(neg_hessian(zeta, y), dtype=float)
    elif log_joint is not None:
        H = -fd_hessian(lambda Z: log_joint(Z, y), zeta)
    else:
        raise ValueError("need neg_hessian or log_joint")
    fisher = _sym(H.mean(axis=0))
    if np.linalg.eigvalsh(fisher).min() <= 0.0:
        raise NumericalError(f"Monte Carlo Fisher matrix is not positive definite with {n_samples} samples")
    return VanTreesResult(_sym(mse), fisher, n_samples)


# --- linear-Gaussian sequences -----------------------------------------------------

@dataclass(frozen=True)
class LinearGaussianSequence:
    """``zeta' = F zeta + w, w ~ N(0, Q)``; ``y = G zeta + v, v ~ N(0, R)``."""

    F: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "G", "R"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        d = self.F.shape[0]
        if self.F.shape != (d, d) or self.Q.shape != (d, d) or self.G.shape[1] != d \
                or self.R.shape != (self.G.shape[0],) * 2:
            raise DimensionError(
                f"inconsistent shapes F{self.F.shape}, Q{self.Q.shape}, G{self.G.shape}, R{self.R.shape}"
            )

    @property
    def dim(self):
        return self.F.shape[0]

    def d_terms(self):
        try:
            np.linalg.cholesky(self.Q)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "process covariance is singular; add jitter (Q + eps I) before computing the bound"
            ) from None
        Qi = _inv_sym(self.Q)
        D11 = self.F.T @ Qi @ self.F
        D12 = -self.F.T @ Qi
        D22 = Qi + self.G.T @ np.linalg.solve(self.R, self.G)
        return D11, D12, _sym(D22)

    def neg_hessians(self, prev, curr, ctx=None):
        N = prev.shape[0]
        tile = lambda M: np.broadcast_to(M, (N,) + M.shape)
        return tuple(tile(M) for M in self.d_terms())

    def sample_transition(self, prev, rng, ctx=None):
        N = prev.shape[0]
        return prev @ self.F.T + rng.standard_normal((N, self.dim)) @ np.linalg.cholesky(self.Q).T

    def log_transition(self, prev, curr, ctx=None):
        r = curr - prev @ self.F.T
        return -0.5 * np.einsum("ni,ij,nj->n", r, np.linalg.inv(self.Q), r)

    def obs_loglik(self, curr, y, ctx=None):
        r = y - curr @ self.G.T
        return -0.5 * np.einsum("ni,ij,nj->n", r, np.linalg.inv(self.R), r)

    def sample_obs(self, curr, rng, ctx=None):
        N = curr.shape[0]
        return curr @ self.G.T + rng.standard_normal((N, self.G.shape[0])) @ np.linalg.cholesky(self.R).T


def fisher_step_exact_linear(model: LinearGaussianSequence, state: FisherState) -> FisherState:
    """Closed-form D-term recursion; tight for linear-Gaussian sequences."""
    D11, D12, D22 = model.d_terms()
    return FisherState.from_information(_schur_step(D11, D12, D22, state.I), state.k + 1)


# --- generic Gaussian transitions with state-dependent moments -----------------------

@dataclass(frozen=True)
class GaussianSequenceModel:
    """``zeta' ~ N(mean(zeta), cov(zeta))`` observed as ``y = G zeta' + v``.

    ``mean`` and ``cov`` are vectorized: ``(N, d) -> (N, d)`` and
    ``(N, d) -> (N, d, d)``. Second differentials of the transition density
    come from central finite differences.
    """

    mean: object
    cov: object
    G: np.ndarray
    R: np.ndarray
    h: float = FD_STEP

    @property
    def dim(self):
        return self.G.shape[1]

    def log_transition(self, prev, curr, ctx=None):
        S = self.cov(prev)
        r = curr - self.mean(prev)
        _, logdet = np.linalg.slogdet(S)
        return -0.5 * (logdet + np.einsum("ni,ni->n", r, np.linalg.solve(S, r[..., None])[..., 0]))

    def sample_transition(self, prev, rng, ctx=None):
        L = np.linalg.cholesky(self.cov(prev))
        z = rng.standard_normal(prev.shape)
        return self.mean(prev) + np.einsum("nij,nj->ni", L, z)

    def obs_loglik(self, curr, y, ctx=None):
        r = y - curr @ self.G.T
        return -0.5 * np.einsum("ni,ij,nj->n", r, np.linalg.inv(self.R), r)

    def sample_obs(self, curr, rng, ctx=None):
        return curr @ self.G.T + rng.standard_normal((curr.shape[0], self.G.shape[0])) @ np.linalg.cholesky(self.R).T

    def neg_hessians(self, prev, curr, ctx=None):
        d = self.dim
        joint = np.hstack([prev, curr])
        H = -fd_hessian(lambda X: self.log_transition(X[:, :d], X[:, d:]), joint, self.h)
        obs = self.G.T @ np.linalg.solve(self.R, self.G)
        return H[:, :d, :d], H[:, :d, d:], H[:, d:, d:] + obs


# --- particle S/D-term step -----------------------------------------------------------

def _weighted_mean_se(J, w):
    mean = np.einsum("n,nij->ij", w, J)
    se = np.sqrt(np.einsum("n,nij->ij", w**2, (J - mean) ** 2))
    return mean, float(se.max()) if se.size else 0.0


def fisher_step_particle(model, state: FisherState, prev, curr, weights, ctx=None, *, hessians=None) -> FisherState:
    """Particle estimate of one step of the information recursion.

    ``prev[i]`` is the ancestor of ``curr[i]``. Posterior weights at the new
    step give the approximate S terms; the pre-update (predictive) weights
    give the D terms. ``hessians`` may carry precomputed
    ``model.neg_hessians(prev, curr, ctx)`` so both can share one evaluation.
    """
    w = np.asarray(weights, dtype=float)
    if hessians is None:
        hessians = model.neg_hessians(np.asarray(prev, dtype=float), np.asarray(curr, dtype=float), ctx)
    J11, J12, J22 = hessians
    S11, e11 = _weighted_mean_se(J11, w)
    S12, e12 = _weighted_mean_se(J12, w)
    S22, e22 = _weighted_mean_se(J22, w)
    d = S11.shape[0]
    joint = _sym(np.block([[S11, S12], [S12.T, S22]]))
    floored = state.floored
    scale = max(1.0, float(np.abs(joint).max()))
    if np.linalg.eigvalsh(joint).min() < -1e-12 * scale:
        warnings.warn("indefinite second-differential estimate; eigenvalue floor applied", RuntimeWarning)
        joint = _floor_eigs(joint)
        S11, S12, S22 = joint[:d, :d], joint[:d, d:], joint[d:, d:]
        floored = True
    I = _schur_step(S11, S12, S22, state.I)
    if np.linalg.eigvalsh(I).min() < EIG_FLOOR:
        I = _floor_eigs(I)
        floored = True
    return FisherState.from_information(I, state.k + 1, floored, max(e11, e12, e22))


# --- brute-force small horizon oracle -----------------------------------------------------

def small_horizon_exact_IA(model, prior_mean, prior_cov, ys, rng, n_samples=100_000, ctxs=None) -> FisherState:
    """Full-history conditional information, reduced to the last state.

    Samples trajectories ``zeta_{0:T}`` from the prior chain, weights them by
    the likelihood of ``ys`` (``T`` observations at steps 1..T), averages the
    block-tridiagonal negative Hessian of the joint log density, and returns
    the inverse of the lower-right block of its inverse.
    """
    ys = [np.asarray(y, dtype=float) for y in ys]
    T = len(ys)
    d = model.dim
    if T < 1 or T > 4 or d * T > MAX_EXACT_DIM:
        raise DimensionError(f"brute-force oracle limited to T <= 4 and d*T <= {MAX_EXACT_DIM}, got d={d}, T={T}")
    ctxs = ctxs or [None] * T
    P0 = np.asarray(prior_cov, dtype=float)
    L0 = np.linalg.cholesky(P0)
    traj = [np.asarray(prior_mean, dtype=float) + rng.standard_normal((n_samples, d)) @ L0.T]
    logw = np.zeros(n_samples)
    for t in range(T):
        nxt = model.sample_transition(traj[-1], rng, ctxs[t])
        logw += model.obs_loglik(nxt, ys[t], ctxs[t])
        traj.append(nxt)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    D = d * (T + 1)
    E = np.zeros((D, D))
    E[:d, :d] = np.linalg.inv(P0)
    for t in range(T):
        J11, J12, J22 = model.neg_hessians(traj[t], traj[t + 1], ctxs[t])
        a, b = slice(t * d, (t + 1) * d), slice((t + 1) * d, (t + 2) * d)
        E[a, a] += np.einsum("n,nij->ij", w, J11)
        E[a, b] += np.einsum("n,nij->ij", w, J12)
        E[b, a] += np.einsum("n,nij->ij", w, J12).T
        E[b, b] += np.einsum("n,nij->ij", w, J22)
    Z = _inv_sym(_sym(E))[-d:, -d:]
    return FisherState.from_covariance(Z, T)


def detection_bound(C_cal, P_bar, Z) -> float:
    """``tr(C' P_bar^-1 C Z)``: least expected chi-square statistic given error bound ``Z``."""
    C_cal = np.atleast_2d(np.asarray(C_cal, dtype=float))
    P_bar = np.atleast_2d(np.asarray(P_bar, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    m, d = C_cal.shape
    if P_bar.shape != (m, m) or Z.shape != (d, d):
        raise DimensionError(f"C{C_cal.shape}, P_bar{P_bar.shape} and Z{Z.shape} are inconsistent")
    if not np.allclose(Z, Z.T, atol=1e-10 * max(1.0, np.abs(Z).max())):
        raise ValueError("Z must be symmetric")
    if np.linalg.eigvalsh(_sym(Z)).min() < -1e-12 * max(1.0, np.abs(Z).max()):
        raise ValueError("Z must be positive semidefinite")
    W = C_cal.T @ np.linalg.solve(P_bar, C_cal)
    return float(np.trace(W @ Z))


# --- attack-2 hidden state with known extraneous sensor matrices --------------------------

@dataclass(frozen=True)
class TransitionContext:
    """Public quantities driving one ``zeta`` transition and the next observation.

    ``u``, ``u_a`` and ``y_a`` are the defender input, the attacker input and
    the transmitted measurement at the source step; ``K`` and ``KC`` the
    defender gain there; ``C_next`` the (known) extraneous sensor matrix at
    the destination step.
    """

    u: np.ndarray
    u_a: np.ndarray
    y_a: np.ndarray
    K: np.ndarray
    KC: np.ndarray
    C_next: np.ndarray


class Attack2KnownCModel:
    """Transition of ``zeta = (x_bar, x_hat_bar)`` under attack 2 when ``C_k`` is known.

    Given ``zeta_k`` the extraneous rows ``(x~'_i, x^~'_i)`` of the next state
    share the random rows of ``(A1, A2, B)`` and are Gaussian with a common
    2x2 covariance built from ``phi = (x~, x, u + u_a)`` and ``psi = (v, u)``,
    ``v = (I - K C) x_hat_bar + K y_a``. The base state follows the plant
    and the base part of the defender prediction is deterministic, regularized
    here with variance ``eps``. The spectral-radius truncation of ``A1`` is
    ignored. Requires ``Q~ = q~ I`` and no extraneous/base process correlation.
    """

    def __init__(self, base, n_ext, m_ext, a1_scale, a2_scale, b_scale, Q_cal, R_cal, eps=1e-6):
        self.base = base
        self.ne, self.me = int(n_ext), int(m_ext)
        self.d = self.ne + base.n
        Q_cal = np.asarray(Q_cal, dtype=float)
        q_ext = Q_cal[:self.ne, :self.ne]
        q = float(q_ext[0, 0])
        if not np.allclose(q_ext, q * np.eye(self.ne)) or np.any(Q_cal[:self.ne, self.ne:] != 0.0):
            raise ValueError("bound model needs an isotropic extraneous process covariance uncorrelated with the base")
        self.q = q
        self.eps = float(eps)
        self.a1s, self.a2s, self.bs = a1_scale**2, a2_scale**2, b_scale**2
        self.Dv = np.diag(np.r_[np.full(self.ne, self.a1s), np.full(base.n, self.a2s)])
        self.R_cal = np.asarray(R_cal, dtype=float)
        self.Qi = np.linalg.inv(base.Q)

    @property
    def dim(self):
        return 2 * self.d

    def _C_cal(self, C_ext):
        C = np.zeros((self.me + self.base.m, self.d))
        C[:self.me, :self.ne] = C_ext
        C[self.me:, self.ne:] = self.base.C
        return C

    def _moments(self, prev, ctx):
        """Row covariance entries ``(a, b, c)`` and ``v`` for every sample."""
        d = self.d
        xb, xh = prev[:, :d], prev[:, d:]
        M = np.eye(d) - ctx.KC
        v = xh @ M.T + ctx.K @ ctx.y_a
        u_tot = ctx.u + ctx.u_a
        a = np.einsum("ni,i,ni->n", xb, np.diag(self.Dv), xb) + self.bs * (u_tot @ u_tot) + self.q
        b = np.einsum("ni,i,ni->n", xb, np.diag(self.Dv), v) + self.bs * (u_tot @ ctx.u)
        c = np.einsum("ni,i,ni->n", v, np.diag(self.Dv), v) + self.bs * (ctx.u @ ctx.u) + self.eps
        return a, b, c, v, M

    def log_transition(self, prev, curr, ctx):
        ne, d, base = self.ne, self.d, self.base
        a, b, c, v, M = self._moments(prev, ctx)
        det = a * c - b * b
        xt, xht = curr[:, :ne], curr[:, d:d + ne]
        Sxx = np.sum(xt * xt, axis=1)
        Sxh = np.sum(xt * xht, axis=1)
        Shh = np.sum(xht * xht, axis=1)
        upper = -0.5 * ne * np.log(det) - 0.5 * (c * Sxx - 2 * b * Sxh + a * Shh) / det
        rx = curr[:, ne:d] - prev[:, ne:d] @ base.A.T - base.B @ (ctx.u + ctx.u_a)
        rh = curr[:, d + ne:] - v[:, ne:] @ base.A.T - base.B @ ctx.u
        lower = -0.5 * np.einsum("ni,ij,nj->n", rx, self.Qi, rx) - 0.5 * np.sum(rh * rh, axis=1) / self.eps
        return upper + lower

    def sample_transition(self, prev, rng, ctx):
        """Draws from the Gaussian transition that :meth:`log_transition` evaluates."""
        ne, d, base = self.ne, self.d, self.base
        N = prev.shape[0]
        a, b, c, v, _ = self._moments(prev, ctx)
        z1, z2 = rng.standard_normal((2, N, ne))
        l11 = np.sqrt(a)
        l21 = b / l11
        l22 = np.sqrt(c - l21 * l21)
        out = np.empty((N, 2 * d))
        out[:, :ne] = l11[:, None] * z1
        out[:, d:d + ne] = l21[:, None] * z1 + l22[:, None] * z2
        w = rng.standard_normal((N, base.n)) @ np.linalg.cholesky(base.Q).T
        out[:, ne:d] = prev[:, ne:d] @ base.A.T + base.B @ (ctx.u + ctx.u_a) + w
        out[:, d + ne:] = v[:, ne:] @ base.A.T + base.B @ ctx.u + np.sqrt(self.eps) * rng.standard_normal((N, base.n))
        return out

    def obs_information(self, ctx):
        C = self._C_cal(ctx.C_next)
        info = np.zeros((self.dim, self.dim))
        info[:self.d, :self.d] = C.T @ np.linalg.solve(self.R_cal, C)
        return info

    def neg_hessians(self, prev, curr, ctx):
        return self._hessians(prev, ctx, curr)

    def expected_neg_hessians(self, prev, ctx):
        """Negative Hessians averaged over ``zeta_{k+1}`` given each ``zeta_k``, in closed form.

        The second differentials are linear in the extraneous rows of the
        next state and their second moments, so the conditional expectation
        replaces those by their means under the transition.
        """
        return self._hessians(prev, ctx, None)

    def _hessians(self, prev, ctx, curr):
        ne, d, n, base = self.ne, self.d, self.base.n, self.base
        N = prev.shape[0]
        a, b, c, v, M = self._moments(prev, ctx)
        xb = prev[:, :d]
        det = a * c - b * b
        dD = np.stack([c, -2 * b, a], axis=1)
        if curr is None:
            xt = xht = np.zeros((N, ne))
            S = ne * dD
            Nq = 2.0 * ne * det
        else:
            xt, xht = curr[:, :ne], curr[:, d:d + ne]
            S = np.stack([np.sum(xht * xht, 1), -2 * np.sum(xt * xht, 1), np.sum(xt * xt, 1)], axis=1)  # dN/ds
            Nq = a * S[:, 0] + b * S[:, 1] + c * S[:, 2]
        HD = np.zeros((3, 3))
        HD[0, 2] = HD[2, 0] = 1.0
        HD[1, 1] = -2.0
        inv = 1.0 / det
        # gradient and Hessian of g(s) = -ne/2 log det - N/(2 det) in s = (a, b, c)
        g_s = -0.5 * ne * dD * inv[:, None] - 0.5 * (S * inv[:, None] - (Nq * inv**2)[:, None] * dD)
        outer_dD = np.einsum("ni,nj->nij", dD, dD)
        cross = np.einsum("ni,nj->nij", S, dD)
        g_ss = (-0.5 * ne * (HD[None] * inv[:, None, None] - outer_dD * (inv**2)[:, None, None])
                - 0.5 * (-(cross + cross.transpose(0, 2, 1)) * (inv**2)[:, None, None]
                         - HD[None] * (Nq * inv**2)[:, None, None]
                         + 2.0 * outer_dD * (Nq * inv**3)[:, None, None]))
        # Jacobian of s with respect to prev = (x_bar, x_hat_bar)
        Dd = np.diag(self.Dv)
        J = np.zeros((N, 3, 2 * d))
        J[:, 0, :d] = 2.0 * xb * Dd
        J[:, 1, :d] = v * Dd
        J[:, 1, d:] = (xb * Dd) @ M
        J[:, 2, d:] = 2.0 * (v * Dd) @ M
        Ha = np.zeros((2 * d, 2 * d))
        Ha[:d, :d] = 2.0 * self.Dv
        Hb = np.zeros((2 * d, 2 * d))
        Hb[:d, d:] = self.Dv @ M
        Hb[d:, :d] = M.T @ self.Dv
        Hc = np.zeros((2 * d, 2 * d))
        Hc[d:, d:] = 2.0 * M.T @ self.Dv @ M
        H11 = np.einsum("nia,nij,njb->nab", J, g_ss, J) \
            + g_s[:, 0, None, None] * Ha + g_s[:, 1, None, None] * Hb + g_s[:, 2, None, None] * Hc
        # mixed second differential d/ds of dg/dr, r = (x~', x^~')
        dNdx = 2 * c[:, None] * xt - 2 * b[:, None] * xht
        dNdh = -2 * b[:, None] * xt + 2 * a[:, None] * xht
        zeros = np.zeros_like(xt)
        d_dNdx = np.stack([zeros, -2 * xht, 2 * xt], axis=1)   # (N, 3, ne)
        d_dNdh = np.stack([2 * xht, -2 * xt, zeros], axis=1)
        g_sx = -0.5 * (d_dNdx * inv[:, None, None] - np.einsum("ni,nj->nji", dNdx, dD) * (inv**2)[:, None, None])
        g_sh = -0.5 * (d_dNdh * inv[:, None, None] - np.einsum("ni,nj->nji", dNdh, dD) * (inv**2)[:, None, None])
        H12 = np.zeros((N, 2 * d, 2 * d))
        H12[:, :, :ne] = np.einsum("nsa,nsi->nai", J, g_sx)
        H12[:, :, d:d + ne] = np.einsum("nsa,nsi->nai", J, g_sh)
        H22 = np.zeros((N, 2 * d, 2 * d))
        eye = np.eye(ne)
        H22[:, :ne, :ne] = -(c * inv)[:, None, None] * eye
        H22[:, :ne, d:d + ne] = H22[:, d:d + ne, :ne] = (b * inv)[:, None, None] * eye
        H22[:, d:d + ne, d:d + ne] = -(a * inv)[:, None, None] * eye
        # base plant rows x' ~ N(A x + B(u + u_a), Q)
        AQ = base.A.T @ self.Qi
        H11[:, ne:d, ne:d] -= AQ @ base.A
        H12[:, ne:d, ne:d] += AQ
        H22[:, ne:d, ne:d] -= self.Qi
        # base defender prediction x^' = A (M x_hat_bar)_low + const, variance eps
        G = base.A @ M[ne:]
        H11[:, d:, d:] -= G.T @ G / self.eps
        H12[:, d:, d + ne:] += G.T / self.eps
        H22[:, d + ne:, d + ne:] -= np.eye(n) / self.eps
        J22 = -H22 + self.obs_information(ctx)
        return _sym(-H11), -H12, _sym(J22)


# --- bootstrap particle run over a generic sequence model -------------------------------

def particle_bound_run(model, prior_mean, prior_cov, ys, n_particles, rng, ctxs=None, *, prior_info=None):
    """Bootstrap particle filter over ``model`` carrying the S-term recursion.

    Starts from ``zeta_0 ~ N(prior_mean, prior_cov)`` (information
    ``prior_info``, default ``prior_cov^-1``) and conditions on ``ys`` at
    steps 1..T. Returns the list of filtered :class:`FisherState` values and
    the final particles and weights.
    """
    from .attacker import systematic_resample

    N = int(n_particles)
    L0 = np.linalg.cholesky(np.asarray(prior_cov, dtype=float))
    x = np.asarray(prior_mean, dtype=float) + rng.standard_normal((N, model.dim)) @ L0.T
    w = np.full(N, 1.0 / N)
    info0 = np.linalg.inv(prior_cov) if prior_info is None else prior_info
    state = FisherState.from_information(info0, 0)
    ctxs = ctxs or [None] * len(ys)
    states = []
    for y, ctx in zip(ys, ctxs):
        if 1.0 / np.sum(w**2) < 0.5 * N:
            idx = systematic_resample(w, rng)
            x, w = x[idx], np.full(N, 1.0 / N)
        prev = x
        x = model.sample_transition(prev, rng, ctx)
        logw = np.log(w) + model.obs_loglik(x, np.asarray(y, dtype=float), ctx)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        state = fisher_step_particle(model, state, prev, x, w, ctx)
        states.append(state)
    return states, x, w
