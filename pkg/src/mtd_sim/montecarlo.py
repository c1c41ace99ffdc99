"""Monte Carlo detection statistics over independently seeded trials."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from .config import ScenarioConfig
from .lqg import evaluate_cost
from .simulate import Setup, prepare, run_trial
from .streams import child_seed


def wilson_interval(successes: int, trials: int, confidence=0.95):
    if trials == 0:
        return (float("nan"), float("nan"))
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return (float(ci.low), float(ci.high))


@dataclass(frozen=True)
class TrialStats:
    """Alarm rates, mean statistics and cost over ``trials`` runs.

    ``alpha_hat`` pools the steps before the attack starts (all steps when
    there is no attack); ``beta_hat_k`` is the per-step alarm frequency
    across trials and ``beta_hat`` pools the attacked steps.
    ``time_to_detection`` holds, per trial, the number of attacked steps
    before the first alarm (-1 if none).
    """

    trials: int
    horizon: int
    attack: str
    attack_start: int
    alpha: float
    alpha_hat: float | None
    alpha_ci: tuple | None
    beta_hat_k: np.ndarray
    beta_ci_k: np.ndarray
    beta_hat: float | None
    beta_ci: tuple | None
    mean_g_k: np.ndarray
    time_to_detection: np.ndarray
    J: float
    J_se: float
    config_sha256: str = ""

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "horizon": self.horizon,
            "attack": self.attack,
            "attack_start": self.attack_start,
            "alpha": self.alpha,
            "alpha_hat": self.alpha_hat,
            "alpha_ci": list(self.alpha_ci) if self.alpha_ci is not None else None,
            "beta_hat_k": self.beta_hat_k.tolist(),
            "beta_ci_k": self.beta_ci_k.tolist(),
            "beta_hat": self.beta_hat,
            "beta_ci": list(self.beta_ci) if self.beta_ci is not None else None,
            "mean_g_k": self.mean_g_k.tolist(),
            "time_to_detection": self.time_to_detection.tolist(),
            "J": self.J,
            "J_se": self.J_se,
            "config_sha256": self.config_sha256,
        }

    @classmethod
    def from_dict(cls, doc) -> "TrialStats":
        doc = dict(doc)
        for key in ("alpha_ci", "beta_ci"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        for key in ("beta_hat_k", "mean_g_k"):
            doc[key] = np.asarray(doc[key], dtype=float)
        doc["beta_ci_k"] = np.asarray(doc["beta_ci_k"], dtype=float).reshape(-1, 2)
        doc["time_to_detection"] = np.asarray(doc["time_to_detection"], dtype=int)
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})


@dataclass(frozen=True)
class _Summary:
    alarm: np.ndarray
    g: np.ndarray
    J: float


def _summarize(setup: Setup, seed: int) -> _Summary:
    trace = run_trial(setup, seed)
    return _Summary(trace.alarm, trace.g, evaluate_cost(trace, setup.cfg.cost))


def _job(args):
    return _summarize(*args)


def resolve_jobs(jobs=None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("MTD_SIM_JOBS", "1"))
    if jobs < 1:
        raise ValueError(f"jobs must be at least 1, got {jobs}")
    return jobs


def trial_seeds(master: int, trials: int):
    return [child_seed(master, i) for i in range(trials)]


def run_monte_carlo(cfg_or_setup, trials: int, jobs=None, *, master_seed=None) -> TrialStats:
    """Run ``trials`` independent trials and aggregate their detector output.

    Trial ``i`` uses ``child_seed(master_seed, i)``; results are collected in
    trial order, so the statistics do not depend on ``jobs``.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    setup = cfg_or_setup if isinstance(cfg_or_setup, Setup) else prepare(cfg_or_setup)
    cfg: ScenarioConfig = setup.cfg
    master = cfg.seed if master_seed is None else master_seed
    seeds = trial_seeds(master, trials)
    jobs = resolve_jobs(jobs)
    if jobs == 1:
        summaries = [_summarize(setup, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_job, [(setup, s) for s in seeds],
                                      chunksize=max(1, trials // (4 * jobs))))
    return aggregate(summaries, cfg)


def aggregate(summaries, cfg: ScenarioConfig) -> TrialStats:
    alarms = np.stack([s.alarm for s in summaries])
    gs = np.stack([s.g for s in summaries])
    Js = np.array([s.J for s in summaries])
    trials, T = alarms.shape
    attacked = cfg.attack.type != "none"
    start = cfg.attack.start if attacked else T
    counts = alarms.sum(axis=0)
    beta_ci_k = np.array([wilson_interval(c, trials) for c in counts])
    alpha_hat = alpha_ci = None
    if start > 0:
        pre = int(alarms[:, :start].sum())
        alpha_hat = pre / (trials * start)
        alpha_ci = wilson_interval(pre, trials * start)
    beta_hat = beta_ci = None
    if attacked:
        post = int(alarms[:, start:].sum())
        n_post = trials * (T - start)
        beta_hat = post / n_post
        beta_ci = wilson_interval(post, n_post)
        after = alarms[:, start:]
        first = np.where(after.any(axis=1), after.argmax(axis=1), -1)
    else:
        first = np.full(trials, -1)
    return TrialStats(
        trials=trials, horizon=T, attack=cfg.attack.type, attack_start=cfg.attack.start,
        alpha=cfg.alpha, alpha_hat=alpha_hat, alpha_ci=alpha_ci,
        beta_hat_k=counts / trials, beta_ci_k=beta_ci_k, beta_hat=beta_hat, beta_ci=beta_ci,
        mean_g_k=gs.mean(axis=0), time_to_detection=first.astype(int),
        J=float(Js.mean()), J_se=float(Js.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0,
        config_sha256=cfg.sha256(),
    )
