import json

import numpy as np
import pytest

from mtd_sim.config import config_from_dict, default_config, load_config, save_config
from mtd_sim.errors import ConfigError

SCALAR = {"schema": 1, "plant": {"A": [[0.5]], "B": [[1]], "C": [[1]], "Q": [[1]], "R": [[1]]}}


def with_(**kw):
    doc = json.loads(json.dumps(SCALAR))
    doc.update(kw)
    return doc


def test_minimal_scalar_parses():
    cfg = config_from_dict(SCALAR)
    assert cfg.plant.n == 1 and cfg.alpha == 0.05
    assert np.array_equal(cfg.cost.W, np.eye(1))
    assert cfg.target.enabled and cfg.attack.type == "none"


def test_alpha_out_of_range_names_field():
    with pytest.raises(ConfigError) as exc:
        config_from_dict(with_(detector={"alpha": 1.5}))
    assert exc.value.pointer == "/detector/alpha"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="colour"):
        config_from_dict(with_(colour="red"))
    with pytest.raises(ConfigError):
        config_from_dict(with_(attack={"kind": "zero_dyn"}))


def test_schema_version_required():
    with pytest.raises(ConfigError):
        config_from_dict({**SCALAR, "schema": 2})


def test_dimension_error_reports_both_shapes():
    doc = with_(plant={"A": [[0.5, 0], [0, 0.5]], "B": [[1]], "C": [[1, 0]], "Q": np.eye(2).tolist(), "R": [[1]]})
    with pytest.raises(ConfigError, match=r"\(1, 1\).*\(2, 2\)"):
        config_from_dict(doc)
    with pytest.raises(ConfigError, match="/cost/W"):
        config_from_dict(with_(cost={"W": [[1, 0], [0, 1]]}))


def test_cross_field_rules():
    with pytest.raises(ConfigError, match="/attack/type"):
        config_from_dict(with_(target={"n_ext": 0, "m_ext": 0}, attack={"type": "attack1"}))
    with pytest.raises(ConfigError, match="/target"):
        config_from_dict(with_(target={"n_ext": 0, "m_ext": 2}))
    with pytest.raises(ConfigError, match="/attack/start"):
        config_from_dict(with_(horizon=10, attack={"type": "zero_dyn", "start": 10}))


def test_round_trip(tmp_path):
    cfg = default_config()
    path = tmp_path / "s.json"
    save_config(cfg, path)
    again = load_config(path)
    assert again.data == cfg.data and again.sha256() == cfg.sha256()


def test_unreadable_files(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


def test_schedules():
    base = {"type": "zero_dyn", "schedule": {"amplitude": 2.0, "period": 4.0}}
    const = config_from_dict(with_(attack=base)).attack.schedule
    assert np.array_equal(const(7), [2.0])
    ramp = config_from_dict(with_(attack={**base, "schedule": {**base["schedule"], "kind": "ramp"}})).attack.schedule
    assert ramp(0) == pytest.approx([0.5]) and ramp(10) == pytest.approx([2.0])
    sine = config_from_dict(with_(attack={**base, "schedule": {**base["schedule"], "kind": "sinusoid"}})).attack.schedule
    assert sine(1) == pytest.approx([2.0]) and sine(2) == pytest.approx([0.0], abs=1e-12)


def test_with_updates_merges_sections():
    cfg = default_config().with_updates(attack={"type": "attack2"})
    assert cfg.attack.type == "attack2" and cfg.attack.particles == 1000
