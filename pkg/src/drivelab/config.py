"""Scenario configuration: the single declarative description of a runnable
experiment, validated against a published JSON schema.

CLI flags override file fields; every default is recorded into the emitted
run manifest so a run can be reproduced bit-exactly from the manifest alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

SCHEMA_VERSION = 1

ACCEL_MAX = 2.5  # m/s^2, magnitude of the strongest discrete action
SPEED_MAX = 12.0  # m/s, base speed cap (scaled per-agent by the accel rating)
ACCEL_SET = (-ACCEL_MAX, -ACCEL_MAX / 2, 0.0, ACCEL_MAX / 2, ACCEL_MAX)
RATING_CHOICES = (0.6, 0.8, 1.0, 1.2, 1.4)

VEHICLE_HALF_EXTENTS = (2.25, 1.0)  # 4.5 m x 2.0 m footprint
PEDESTRIAN_RADIUS = 0.4
PEDESTRIAN_SPEED = 1.4

LIDAR_RANGE = 50.0
LIDAR_STACK = 5

SPLINE_STATIONS = 5  # control stations between spawn and goal
SPLINE_BINS = 7  # lateral deviation bins per station


@dataclass
class HyperParams:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    iterations: int = 50  # N outer iterations
    k1: int = 8  # spline collection rounds per bilevel iteration
    k2: int = 8  # accel collection rounds per bilevel iteration
    episodes_per_round: int = 4
    checkpoint_every: int = 10

    def validate(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must lie in (0, 1]")
        if not (0.0 <= self.lam <= 1.0):
            raise ConfigError("lam must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")


@dataclass
class ScenarioConfig:
    map: str = "intersection4"
    model: str = "fixed_track"  # fixed_track | spline
    n_agents: int = 4
    goal_mode: str = "opposite"  # opposite | cross
    continuous_spawn: bool = False
    lidar_rays: int = 64
    lidar_noise_pct: float = 0.0
    lidar_stack: int = LIDAR_STACK
    comm_enabled: bool = False
    pedestrians: bool = False
    max_pedestrians: int = 10
    ratings_enabled: bool = False
    signals_enabled: bool = True
    dt: float = 0.25
    horizon: int = 200
    a_max: float = ACCEL_MAX
    v_max: float = SPEED_MAX
    seed: int = 0
    output_dir: str = "runs/default"
    hyper: HyperParams = field(default_factory=HyperParams)

    def validate(self):
        errors = _schema_errors(self.to_dict())
        if errors:
            raise ConfigError("; ".join(errors))
        self.hyper.validate()
        if self.model == "spline" and self.map == "crosswalk" and self.goal_mode == "cross":
            raise ConfigError("crosswalk map has a single goal pocket; use goal_mode=opposite")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        data.pop("schema_version", None)
        hyper = HyperParams(**data.pop("hyper", {}))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(hyper=hyper, **data)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


class ConfigError(ValueError):
    """Raised for invalid scenario configurations (CLI exit code 2)."""


_HYPER_SCHEMA = {
    "type": "object",
    "properties": {
        "gamma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "lam": {"type": "number", "minimum": 0, "maximum": 1},
        "clip_eps": {"type": "number", "exclusiveMinimum": 0},
        "value_coef": {"type": "number", "minimum": 0},
        "entropy_coef": {"type": "number", "minimum": 0},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "minibatch_size": {"type": "integer", "minimum": 1},
        "iterations": {"type": "integer", "minimum": 0},
        "k1": {"type": "integer", "minimum": 1},
        "k2": {"type": "integer", "minimum": 1},
        "episodes_per_round": {"type": "integer", "minimum": 1},
        "checkpoint_every": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "map": {"type": "string"},
        "model": {"enum": ["fixed_track", "spline"]},
        "n_agents": {"type": "integer", "minimum": 1},
        "goal_mode": {"enum": ["opposite", "cross"]},
        "continuous_spawn": {"type": "boolean"},
        "lidar_rays": {"type": "integer", "minimum": 1},
        "lidar_noise_pct": {"type": "number", "minimum": 0, "maximum": 100},
        "lidar_stack": {"type": "integer", "minimum": 1},
        "comm_enabled": {"type": "boolean"},
        "pedestrians": {"type": "boolean"},
        "max_pedestrians": {"type": "integer", "minimum": 0},
        "ratings_enabled": {"type": "boolean"},
        "signals_enabled": {"type": "boolean"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "integer", "minimum": 1},
        "a_max": {"type": "number", "exclusiveMinimum": 0},
        "v_max": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "hyper": _HYPER_SCHEMA,
    },
    "additionalProperties": False,
}


def _schema_errors(data: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    return [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in validator.iter_errors(data)]
