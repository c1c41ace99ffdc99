import json

import pytest

from mtd_sim.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from mtd_sim.config import default_config, save_config


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "s.json"
    save_config(default_config().with_updates(horizon=20, warmup=20, attack={"type": "attack1", "particles": 30,
                                                                          "start": 5}), path)
    return path


def test_simulate_and_mc(scenario, tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["simulate", "--config", str(scenario), "--seed", "42", "--out", str(out)]) == EXIT_OK
    assert out.read_text().startswith("k,g,alarm,")
    stats = tmp_path / "s.json"
    assert main(["mc", "--config", str(scenario), "--trials", "4", "--out", str(stats)]) == EXIT_OK
    assert json.loads(stats.read_text())["trials"] == 4
    assert "beta_hat" in capsys.readouterr().out


def test_bound_and_validate(scenario, tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bound", "--config", str(scenario), "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[0].startswith("k,bound,expected_g,g,g_se,z_eig_0")
    assert main(["validate", "--config", str(scenario)]) == EXIT_OK


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": 1, "plant": {"A": [[1]], "B": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]},
                               "detector": {"alpha": 1.5}}))
    assert main(["validate", "--config", str(bad)]) == EXIT_CONFIG
    assert "/detector/alpha" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", "x"]) == EXIT_CONFIG


def test_failed_model_check_exits_2(tmp_path):
    bad = tmp_path / "u.json"
    bad.write_text(json.dumps({"schema": 1, "plant": {"A": [[2]], "B": [[0]], "C": [[1]], "Q": [[1]], "R": [[1]]},
                               "target": {"n_ext": 0, "m_ext": 0}, "horizon": 5}))
    assert main(["validate", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "t.csv")]) == EXIT_NUMERICAL


def test_bad_jobs(scenario, tmp_path, monkeypatch):
    monkeypatch.setenv("MTD_SIM_JOBS", "0")
    assert main(["mc", "--config", str(scenario), "--trials", "2", "--out", str(tmp_path / "s.json")]) == EXIT_CONFIG
