import json

import numpy as np
import pytest

from mtd_sim.export import (TRACE_COLUMNS, load_stats, read_trace_csv, version_string, write_bound_csv,
                            write_stats_json, write_trace_csv)
from mtd_sim.montecarlo import resolve_jobs, run_monte_carlo, trial_seeds, wilson_interval
from mtd_sim.simulate import run_trial


def test_wilson_interval_contains_rate():
    lo, hi = wilson_interval(50, 1000)
    assert lo < 0.05 < hi
    assert wilson_interval(0, 0) != wilson_interval(0, 0)  # nan pair


def test_single_trial_reduces_to_run_trial(default_cfg):
    cfg = default_cfg.with_updates(horizon=50, warmup=10)
    stats = run_monte_carlo(cfg, 1, 1)
    tr = run_trial(cfg, trial_seeds(cfg.seed, 1)[0])
    assert np.array_equal(stats.beta_hat_k, tr.alarm.astype(float))
    assert np.array_equal(stats.mean_g_k, tr.g)


def test_h0_alpha_within_wilson(default_cfg):
    cfg = default_cfg.with_updates(horizon=20, warmup=100)
    stats = run_monte_carlo(cfg, 2000, 1)
    lo, hi = stats.alpha_ci
    assert lo <= cfg.alpha <= hi
    assert stats.beta_hat is None and np.all(stats.time_to_detection == -1)


def test_parallelism_does_not_change_results(default_cfg):
    cfg = default_cfg.with_updates(horizon=30, warmup=10, attack={"type": "attack1", "particles": 20, "start": 10})
    a, b = run_monte_carlo(cfg, 12, 1), run_monte_carlo(cfg, 12, 3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert a.beta_hat is not None and len(a.time_to_detection) == 12


def test_jobs_resolution(monkeypatch):
    monkeypatch.setenv("MTD_SIM_JOBS", "4")
    assert resolve_jobs(None) == 4 and resolve_jobs(2) == 2
    with pytest.raises(ValueError):
        resolve_jobs(0)
    with pytest.raises(ValueError):
        run_monte_carlo(None, 0)


def test_trace_csv_columns_and_round_trip(default_cfg, tmp_path):
    tr = run_trial(default_cfg.with_updates(horizon=25, warmup=5), 2)
    path = tmp_path / "t.csv"
    write_trace_csv(tr, path)
    rows = read_trace_csv(path)
    assert tuple(rows[0].keys()) == TRACE_COLUMNS
    assert [float(r["g"]) for r in rows] == tr.g.tolist()
    assert rows[3]["g"] == repr(float(tr.g[3]))
    assert [int(r["alarm"]) for r in rows] == tr.alarm.astype(int).tolist()
    assert float(rows[0]["x_norm"]) == pytest.approx(np.linalg.norm(tr.x[0]))


def test_empty_trace_header_only(default_cfg, tmp_path):
    tr = run_trial(default_cfg.with_updates(horizon=3, warmup=0), 0)
    empty = type(tr)(**{**tr.__dict__, **{k: v[:0] for k, v in tr.__dict__.items() if isinstance(v, np.ndarray)}})
    path = tmp_path / "e.csv"
    write_trace_csv(empty, path)
    assert path.read_text() == ",".join(TRACE_COLUMNS) + "\n"


def test_stats_json_round_trip(default_cfg, tmp_path):
    cfg = default_cfg.with_updates(horizon=20, warmup=5, attack={"type": "zero_dyn", "start": 5})
    stats = run_monte_carlo(cfg, 5, 1)
    path = tmp_path / "s.json"
    write_stats_json(stats, path)
    doc = json.loads(path.read_text())
    assert doc["config_sha256"] == cfg.sha256() and doc["version"] == version_string()
    assert doc["version"].startswith("v")
    assert load_stats(path).to_dict() == stats.to_dict()


def test_io_errors_name_path(tmp_path, default_cfg):
    tr = run_trial(default_cfg.with_updates(horizon=3, warmup=0), 0)
    bad = tmp_path / "missing" / "t.csv"
    with pytest.raises(OSError, match="missing"):
        write_trace_csv(tr, bad)


def test_bound_csv_layout(tmp_path):
    from mtd_sim.bound import BoundResult
    res = BoundResult(np.array([1, 2]), np.array([0.5, 0.25]), np.array([0.6, 0.3]), np.array([0.7, 0.2]),
                      np.array([[0.1, 0.2], [0.3, 0.4]]), False)
    path = tmp_path / "b.csv"
    write_bound_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,bound,expected_g,g,g_se,z_eig_0,z_eig_1"
    assert lines[1] == "1,0.5,0.6,0.7,0.0,0.1,0.2"
