"""CSV and JSON export of traces, statistics and bounds."""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from .montecarlo import TrialStats

TRACE_COLUMNS = ("k", "g", "alarm", "x_norm", "xt_norm", "u_norm", "ua_norm", "sa_norm")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], cwd=here,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    desc = out.stdout.strip()
    return f"v{__version__}-{desc}" if out.returncode == 0 and desc else f"v{__version__}"


def _open(path, mode="w"):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot open {path} for writing: {exc.strerror}", str(path)) from None


def _norms(M):
    return np.linalg.norm(M, axis=1) if M.shape[1] else np.zeros(M.shape[0])


def trace_rows(trace):
    cols = [trace.k, trace.g, trace.alarm.astype(int), _norms(trace.x), _norms(trace.xt),
            _norms(trace.u), _norms(trace.u_a), _norms(trace.s_a)]
    for row in zip(*cols):
        yield [int(row[0]), repr(float(row[1])), int(row[2])] + [repr(float(v)) for v in row[3:]]


def write_trace_csv(trace, path):
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows(trace))


def read_trace_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_stats_json(stats: TrialStats, path):
    doc = {"version": version_string(), **stats.to_dict()}
    with _open(path) as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_stats(path) -> TrialStats:
    return TrialStats.from_dict(json.loads(Path(path).read_text()))


def write_bound_csv(result, path):
    d = result.z_eigs.shape[1]
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "bound", "expected_g", "g", "g_se"] + [f"z_eig_{i}" for i in range(d)])
        se = result.g_se if result.g_se is not None else np.zeros(len(result.k))
        for i in range(len(result.k)):
            vals = [result.bound[i], result.expected_g[i], result.g[i], se[i], *result.z_eigs[i]]
            w.writerow([int(result.k[i])] + [repr(float(v)) for v in vals])
