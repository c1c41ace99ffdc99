"""Command-line entry point: ``mtd-sim {simulate,mc,bound,validate}``."""

from __future__ import annotations

import argparse
import sys

from .config import default_config_path, load_config
from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _jobs(args):
    from .montecarlo import resolve_jobs

    try:
        return resolve_jobs(args.jobs)
    except ValueError as exc:
        raise ConfigError(f"--jobs / MTD_SIM_JOBS: {exc}") from None


def cmd_simulate(args):
    from .export import write_trace_csv
    from .simulate import run_trial

    cfg = load_config(args.config)
    _jobs(args)
    seed = cfg.seed if args.seed is None else args.seed
    trace = run_trial(cfg, seed)
    write_trace_csv(trace, args.out)
    print(f"simulate: {len(trace)} steps, {int(trace.alarm.sum())} alarms -> {args.out}")
    return EXIT_OK


def cmd_mc(args):
    from .export import write_stats_json
    from .montecarlo import run_monte_carlo

    cfg = load_config(args.config)
    stats = run_monte_carlo(cfg, args.trials, _jobs(args), master_seed=args.seed)
    write_stats_json(stats, args.out)
    parts = [f"mc: {stats.trials} trials"]
    if stats.alpha_hat is not None:
        parts.append(f"alpha_hat={stats.alpha_hat:.4f}")
    if stats.beta_hat is not None:
        parts.append(f"beta_hat={stats.beta_hat:.4f}")
    print(", ".join(parts) + f" -> {args.out}")
    return EXIT_OK


def cmd_bound(args):
    from .bound import run_bound_mc
    from .export import write_bound_csv

    cfg = load_config(args.config)
    res = run_bound_mc(cfg, args.trials, _jobs(args), master_seed=args.seed)
    write_bound_csv(res, args.out)
    flag = " (eigenvalue floor applied)" if res.floored else ""
    print(f"bound: {len(res.k)} steps over {res.trials} trial(s){flag} -> {args.out}")
    return EXIT_OK


def cmd_validate(args):
    from .lqg import solve_control_dare, solve_estimation_dare
    from .plant import validate_model

    cfg = load_config(args.config)
    report = validate_model(cfg.plant)
    print(report)
    if not report.passed:
        return EXIT_CONFIG
    est = solve_estimation_dare(cfg.plant)
    ctrl = solve_control_dare(cfg.plant, cfg.cost)
    print(f"estimation DARE: trace P = {est.P.trace():.6g}")
    print(f"control DARE:    trace S = {ctrl.S.trace():.6g}")
    t = cfg.target
    print(f"target: n_ext={t.n_ext} m_ext={t.m_ext}" + ("" if t.enabled else " (disabled)"))
    print(f"attack: {cfg.attack.type} from step {cfg.attack.start}, horizon {cfg.horizon}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mtd-sim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default=str(default_config_path()),
                       help="scenario JSON (default: bundled default scenario)")
        p.add_argument("--seed", type=int, default=None, help="seed (default: config seed)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default: $MTD_SIM_JOBS or 1)")
        if out:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("simulate", help="run one trial and write its trace CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mc", help="Monte Carlo detection statistics as JSON")
    common(p)
    p.add_argument("--trials", type=int, default=200)
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("bound", help="per-step detection lower bound as CSV (attack 2, known C)")
    common(p)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("validate", help="check the plant and solve both Riccati equations")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
