"""Seeded closed-loop simulation of plant, defender and attacker.

Per step k the plant emits ``y_bar_k``; the attacker (when active) biases it
and the operator receives ``y_a_k``. The augmented filter's residue feeds the
chi-square detector, the base filter's estimate feeds the controller, and the
plant receives the controller input plus the attacker's actuator input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import streams
from .attacker import (DefenderOracle, ExpectedMeasurementAttack, InfoView, NoAttack,
                       SubtractInfluenceAttack, ZeroDynamicsAttack)
from .config import ScenarioConfig
from .errors import FilterDivergenceError
from .lqg import solve_control_dare, solve_estimation_dare
from .moving_target import AugmentedNoiseSpec, DetectorConfig, TargetDistribution, tv_advance, tv_gain
from .plant import lyapunov

PRIOR_SEED = 20150101  # public seed of the run that estimates the attacker's start distribution
PRIOR_STEPS = 5000


@dataclass(frozen=True)
class Setup:
    """Everything derived from a scenario that does not depend on the trial seed."""

    cfg: ScenarioConfig
    est: object
    ctrl: object
    target: TargetDistribution | None
    noise: AugmentedNoiseSpec
    detector: DetectorConfig
    init_cov: np.ndarray  # joint covariance of (x_0, x_0 - x_hat_0)
    P0: np.ndarray  # initial covariance of the augmented filter
    attacker_prior: np.ndarray | None = None

    @property
    def n_ext(self):
        return self.cfg.target.n_ext

    @property
    def m_ext(self):
        return self.cfg.target.m_ext


def closed_loop_covariance(base, est, ctrl):
    """Stationary covariance of ``(x_k, e_k)``, ``e_k = x_k - x_hat_{k|k-1}``."""
    A, B, C, K, L = base.A, base.B, base.C, est.K, ctrl.L
    n = base.n
    IKC = np.eye(n) - K @ C
    F = np.block([[A + B @ L, -B @ L @ IKC], [np.zeros((n, n)), A @ IKC]])
    Gw = np.vstack([np.eye(n), np.eye(n)])
    Gv = np.vstack([B @ L @ K, -A @ K])
    return lyapunov(F, Gw @ base.Q @ Gw.T + Gv @ base.R @ Gv.T)


def prepare(cfg: ScenarioConfig, *, attacker_prior=None) -> Setup:
    base, t = cfg.plant, cfg.target
    est = solve_estimation_dare(base)
    ctrl = solve_control_dare(base, cfg.cost)
    target = None
    if t.enabled:
        target = TargetDistribution.for_model(base, t.n_ext, t.m_ext, a1_scale=t.a1_scale,
                                              a2_scale=t.a2_scale, b_scale=t.b_scale,
                                              c_scale=t.c_scale, rho_max=t.rho_max)
    noise = AugmentedNoiseSpec.default(base, t.n_ext, t.m_ext, t.q_ext, t.r_ext)
    detector = DetectorConfig(cfg.alpha, t.m_ext + base.m)
    P0 = np.zeros((t.n_ext + base.n,) * 2)
    P0[:t.n_ext, :t.n_ext] = np.eye(t.n_ext)
    P0[t.n_ext:, t.n_ext:] = est.P
    setup = Setup(cfg, est, ctrl, target, noise, detector, closed_loop_covariance(base, est, ctrl), P0)
    if attacker_prior is None and cfg.attack.type in ("attack1", "attack2"):
        attacker_prior = stationary_prior(setup)
    if attacker_prior is not None:
        setup = replace(setup, attacker_prior=np.asarray(attacker_prior, dtype=float))
    return setup


def stationary_prior(setup: Setup, steps=PRIOR_STEPS, seed=PRIOR_SEED) -> np.ndarray:
    """Second moment of ``(x_bar_k, x_hat_bar_k)`` over a long attack-free run with a public seed."""
    quiet = setup.cfg.with_updates(attack={"type": "none"}, horizon=steps)
    trace = run_trial(replace(setup, cfg=quiet), seed)
    Z = np.hstack([trace.x_bar, trace.xhat_bar])
    M = Z.T @ Z / Z.shape[0]
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class TrialTrace:
    """Recorded post-warm-up steps of one trial.

    ``xhat_bar`` is the augmented filter's one-step prediction used for the
    residue at each step; ``u`` is the defender's input (the plant receives
    ``u + u_a``).
    """

    n_ext: int
    m_ext: int
    x_bar: np.ndarray
    xhat_bar: np.ndarray
    y_bar: np.ndarray
    y_a: np.ndarray
    u: np.ndarray
    u_a: np.ndarray
    s_a: np.ndarray
    z: np.ndarray
    g: np.ndarray
    alarm: np.ndarray
    attack_start: int = 0

    def __len__(self):
        return self.g.shape[0]

    @property
    def k(self):
        return np.arange(len(self))

    @property
    def x(self):
        return self.x_bar[:, self.n_ext:]

    @property
    def xt(self):
        return self.x_bar[:, :self.n_ext]


@dataclass
class StepInfo:
    """Snapshot handed to an observer after each recorded step."""

    k: int
    active: bool
    attack: object
    view: InfoView | None
    oracle: DefenderOracle | None
    C_cal: np.ndarray
    P_bar: np.ndarray
    y_bar: np.ndarray
    y_a: np.ndarray
    u: np.ndarray
    u_a: np.ndarray
    g: float
    extra: dict = field(default_factory=dict)


def _stream_seeds(seed, overrides):
    seeds = {name: seed for name in streams.STREAM_NAMES}
    for name, value in (overrides or {}).items():
        if name not in seeds:
            raise KeyError(f"unknown stream {name!r}; expected one of {sorted(seeds)}")
        seeds[name] = value
    return seeds


def _make_attack(setup: Setup, view, seed):
    a = setup.cfg.attack
    rng = streams.stream_rng(seed, streams.ATTACKER)
    if a.type == "none":
        return NoAttack(view)
    if a.type == "zero_dyn":
        return ZeroDynamicsAttack(view)
    cls = SubtractInfluenceAttack if a.type == "attack1" else ExpectedMeasurementAttack
    return cls(view, a.particles, rng, oracle_p=a.oracle_p, known_c=a.known_c)


def run_trial(cfg_or_setup, seed: int, *, stream_seeds=None, observer=None) -> TrialTrace:
    """Simulate ``warmup + horizon`` steps and record the last ``horizon``.

    Each noise channel draws from its own keyed stream. ``stream_seeds`` maps
    stream names (see :data:`mtd_sim.streams.STREAM_NAMES`) to replacement
    seeds so one channel can be varied while the others stay frozen.
    """
    setup = cfg_or_setup if isinstance(cfg_or_setup, Setup) else prepare(cfg_or_setup)
    cfg, base = setup.cfg, setup.cfg.plant
    ne, me, n, m, p = setup.n_ext, setup.m_ext, base.n, base.m, base.p
    d, mb = ne + n, me + m
    T, warm = cfg.horizon, cfg.warmup
    total = T + warm
    seeds = _stream_seeds(seed, stream_seeds)
    rng = {name: streams.stream_rng(seeds[name], sid) for name, sid in streams.STREAM_NAMES.items()}

    # noise and target matrices for the whole run, one keyed stream each
    W = rng["process"].standard_normal((total, n)) @ np.linalg.cholesky(base.Q).T
    V = rng["sensor"].standard_normal((total, m)) @ np.linalg.cholesky(base.R).T
    gq, fq = setup.noise._wq
    gr, fr = setup.noise._wr
    Wt = W @ gq.T + rng["ext_process"].standard_normal((total, ne)) @ fq.T
    Vt = V @ gr.T + rng["ext_sensor"].standard_normal((total, me)) @ fr.T
    if setup.target is not None:
        A1s, A2s, Bks, Cks = setup.target.sample_batch(rng["target"], total)
    else:
        A1s, A2s, Bks, Cks = (np.zeros((total, 0, k)) for k in (0, n, p, 0))

    z0 = rng["initial"].standard_normal(2 * n + ne)
    xe = np.linalg.cholesky(setup.init_cov + 1e-15 * np.eye(2 * n)) @ z0[:2 * n]
    x, xt = xe[:n], z0[2 * n:]
    xhat = x - xe[n:]
    xbar_pred = np.concatenate([np.zeros(ne), xhat])
    P = setup.P0.copy()

    A, B, C, K, L = base.A, base.B, base.C, setup.est.K, setup.ctrl.L
    Q_cal, R_cal = setup.noise.Q_cal, setup.noise.R_cal
    A_cal = np.zeros((d, d))
    A_cal[ne:, ne:] = A
    B_cal = np.zeros((d, p))
    B_cal[ne:] = B
    C_cal = np.zeros((mb, d))
    C_cal[me:, ne:] = C

    atk_cfg = cfg.attack
    view = None
    if atk_cfg.type != "none":
        view = InfoView(base, K, L, Q_cal, R_cal, setup.target, prior_cov=setup.attacker_prior,
                        P_init=setup.P0, history=T + warm)
    attack = _make_attack(setup, view, seeds["attacker"])
    needs_oracle = atk_cfg.type in ("attack1", "attack2")
    start = warm + atk_cfg.start
    zero_p = np.zeros(p)
    zero_mb = np.zeros(mb)
    eta = setup.detector.eta

    rec = {key: np.empty((T, size)) for key, size in
           (("x_bar", d), ("xhat_bar", d), ("y_bar", mb), ("y_a", mb), ("u", p),
            ("u_a", p), ("s_a", mb), ("z", mb))}
    g_rec = np.empty(T)
    alarm_rec = np.zeros(T, dtype=bool)

    for k in range(total):
        A_cal[:ne, :ne] = A1s[k]
        A_cal[:ne, ne:] = A2s[k]
        B_cal[:ne] = Bks[k]
        C_cal[:me, :ne] = Cks[k]
        y_bar = np.concatenate([Cks[k] @ xt + Vt[k], C @ x + V[k]])

        try:
            K_tv, P_bar, Linv = tv_gain(P, C_cal, R_cal, step=k)
        except FilterDivergenceError as exc:
            raise FilterDivergenceError("augmented filter diverged", exc.condition, k) from None
        active = atk_cfg.type != "none" and k >= start
        oracle = None
        if active:
            if needs_oracle:
                oracle = DefenderOracle(P, K_tv, K_tv @ C_cal, Cks[k] if atk_cfg.known_c else None)
            s_a = attack.bias(k - warm, y_bar, oracle)
            u_a = atk_cfg.schedule(k - start)
        else:
            s_a, u_a = zero_mb, zero_p
        y_a = y_bar + s_a

        z = y_a - C_cal @ xbar_pred
        r = Linv @ z
        g = float(r @ r)

        x_filt = xhat + K @ (y_a[me:] - C @ xhat)
        u = L @ x_filt
        xhat_next = A @ x_filt + B @ u
        xbar_next, P_next = tv_advance(xbar_pred, P, K_tv, A_cal, B_cal, C_cal, Q_cal, R_cal, y_a, u)

        j = k - warm
        if j >= 0:
            rec["x_bar"][j, :ne] = xt
            rec["x_bar"][j, ne:] = x
            rec["xhat_bar"][j] = xbar_pred
            rec["y_bar"][j] = y_bar
            rec["y_a"][j] = y_a
            rec["u"][j] = u
            rec["u_a"][j] = u_a
            rec["s_a"][j] = s_a
            rec["z"][j] = z
            g_rec[j] = g
            alarm_rec[j] = g > eta
            if observer is not None:
                observer(StepInfo(j, active, attack, view, oracle, C_cal.copy(), P_bar, y_bar, y_a, u, u_a, g))

        if view is not None:
            view.observe_output(y_bar)
            view.observe_input(u)
            view.record_attack(u_a, s_a, y_a)
        if active:
            attack.advance(k - warm, u, u_a, y_a, oracle)

        u_plant = u + u_a
        xt = A1s[k] @ xt + A2s[k] @ x + Bks[k] @ u_plant + Wt[k]
        x = A @ x + B @ u_plant + W[k]
        xhat, xbar_pred, P = xhat_next, xbar_next, P_next

    return TrialTrace(ne, me, alarm=alarm_rec, g=g_rec, attack_start=atk_cfg.start, **rec)
