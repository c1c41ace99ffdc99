"""Scenario configuration: JSON schema, defaults and validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, DimensionError
from .lqg import CostSpec
from .plant import StateSpaceModel

SCHEMA_VERSION = 1
ATTACK_TYPES = ("none", "zero_dyn", "attack1", "attack2")
SCHEDULE_KINDS = ("constant", "ramp", "sinusoid")

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "items": {"type": "number"}}}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "plant"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "plant": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A", "B", "C", "Q", "R"],
            "properties": {k: _matrix for k in ("A", "B", "C", "Q", "R")},
        },
        "cost": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"W": _matrix, "U": _matrix},
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_ext": {"type": "integer", "minimum": 0},
                "m_ext": {"type": "integer", "minimum": 0},
                "a1_scale": _pos,
                "a2_scale": _pos,
                "b_scale": _pos,
                "c_scale": _pos,
                "rho_max": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "q_ext": _pos,
                "r_ext": _pos,
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": list(ATTACK_TYPES)},
                "start": {"type": "integer", "minimum": 0},
                "particles": {"type": "integer", "minimum": 2},
                "oracle_p": {"type": "boolean"},
                "known_c": {"type": "boolean"},
                "burn_in": {"type": "integer", "minimum": 0},
                "schedule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": list(SCHEDULE_KINDS)},
                        "amplitude": {"oneOf": [{"type": "number"},
                                                {"type": "array", "items": {"type": "number"}}]},
                        "period": _pos,
                    },
                },
            },
        },
        "horizon": {"type": "integer", "minimum": 1},
        "warmup": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "cost": None,  # identity weights of matching size
    "target": {
        "n_ext": 2, "m_ext": 2, "a1_scale": 0.3, "a2_scale": 0.5, "b_scale": 0.5,
        "c_scale": 1.0, "rho_max": 0.9, "q_ext": 0.1, "r_ext": 0.1,
    },
    "detector": {"alpha": 0.05},
    "attack": {
        "type": "none", "start": 0, "particles": 1000, "oracle_p": True, "known_c": False,
        "burn_in": 50, "schedule": {"kind": "constant", "amplitude": 0.2, "period": 50.0},
    },
    "horizon": 500,
    "warmup": 200,
    "seed": 0,
}


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else "/"


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class TargetConfig:
    n_ext: int
    m_ext: int
    a1_scale: float
    a2_scale: float
    b_scale: float
    c_scale: float
    rho_max: float
    q_ext: float
    r_ext: float

    @property
    def enabled(self) -> bool:
        return self.n_ext > 0


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str
    amplitude: np.ndarray
    period: float

    def __call__(self, j: int) -> np.ndarray:
        """Attacker actuator input ``j`` steps after the attack started."""
        if self.kind == "constant":
            return self.amplitude.copy()
        if self.kind == "ramp":
            return self.amplitude * min(1.0, (j + 1) / self.period)
        return self.amplitude * np.sin(2.0 * np.pi * j / self.period)


@dataclass(frozen=True)
class AttackConfig:
    type: str
    start: int
    particles: int
    oracle_p: bool
    known_c: bool
    burn_in: int
    schedule: ScheduleConfig


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; ``data`` keeps the defaults-applied JSON document."""

    plant: StateSpaceModel
    cost: CostSpec
    target: TargetConfig
    alpha: float
    attack: AttackConfig
    horizon: int
    warmup: int
    seed: int
    data: dict

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def sha256(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_updates(self, **sections) -> "ScenarioConfig":
        """Copy with top-level keys (or whole sections, merged) replaced."""
        return config_from_dict(_merge(self.data, sections))


def _as_matrix(data, pointer):
    rows = {len(r) for r in data}
    if len(rows) != 1:
        raise ConfigError("matrix rows have unequal lengths", pointer)
    return np.array(data, dtype=float)


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Validate ``doc`` against the schema, apply defaults and check dimensions."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, _pointer(err.absolute_path))
    data = _merge({k: v for k, v in DEFAULTS.items() if v is not None}, doc)

    mats = {k: _as_matrix(v, f"/plant/{k}") for k, v in data["plant"].items()}
    try:
        plant = StateSpaceModel(**mats)
    except DimensionError as exc:
        raise ConfigError(str(exc), "/plant") from None
    cost_doc = data.get("cost") or {}
    W = _as_matrix(cost_doc["W"], "/cost/W") if "W" in cost_doc else np.eye(plant.n)
    U = _as_matrix(cost_doc["U"], "/cost/U") if "U" in cost_doc else np.eye(plant.p)
    if W.shape != (plant.n, plant.n):
        raise ConfigError(f"W has shape {W.shape} but A has shape {plant.A.shape}", "/cost/W")
    if U.shape != (plant.p, plant.p):
        raise ConfigError(f"U has shape {U.shape} but B has shape {plant.B.shape}", "/cost/U")
    try:
        cost = CostSpec(W, U)
    except ValueError as exc:
        raise ConfigError(str(exc), "/cost") from None

    target = TargetConfig(**data["target"])
    if (target.n_ext == 0) != (target.m_ext == 0):
        raise ConfigError("n_ext and m_ext must both be zero (target disabled) or both positive", "/target")

    att = data["attack"]
    sched = att["schedule"]
    amp = np.atleast_1d(np.array(sched["amplitude"], dtype=float))
    if amp.size == 1:
        amp = np.full(plant.p, amp[0])
    if amp.shape != (plant.p,):
        raise ConfigError(f"amplitude has {amp.size} entries but B has shape {plant.B.shape}",
                          "/attack/schedule/amplitude")
    if att["type"] in ("attack1", "attack2") and not target.enabled:
        raise ConfigError(f"{att['type']} needs the moving target enabled", "/attack/type")
    attack = AttackConfig(att["type"], att["start"], att["particles"], att["oracle_p"], att["known_c"],
                          att["burn_in"], ScheduleConfig(sched["kind"], amp, float(sched["period"])))
    if data["attack"]["start"] >= data["horizon"] and attack.type != "none":
        raise ConfigError("attack starts after the horizon ends", "/attack/start")
    return ScenarioConfig(plant, cost, target, float(data["detector"]["alpha"]), attack,
                          int(data["horizon"]), int(data["warmup"]), int(data["seed"]), data)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    return config_from_dict(doc)


def save_config(cfg: ScenarioConfig, path):
    Path(path).write_text(json.dumps(cfg.data, indent=2) + "\n")


def default_config_path():
    return resources.files("mtd_sim") / "configs" / "default.json"


def default_config() -> ScenarioConfig:
    return config_from_dict(json.loads(default_config_path().read_text()))
