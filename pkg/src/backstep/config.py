"""Run configuration: one YAML file drives every command."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .system_model import PlantSpec, plant_from_dict

DEFAULTS = {
    "plant": {"A": [[0.0, 1.0], [0.0, 0.0]], "B": [[0.0], [1.0]], "lambda": 20.0, "l": 1.0, "xi": 0.3},
    "synthesis": {"poles": None, "Q": None, "margin": 2.0, "kernel_h": 0.005, "tail_tol": 1e-13,
                  "feedback_sign": 1},
    "simulation": {"scheme": "crank_nicolson", "h": 0.005, "dt": 1e-4, "T": 2.0, "record_every": 100,
                   "coupling": "lagged",
                   "initial": {"X0": None, "mode": 1, "amplitude": 1.0, "compatible": True}},
    "output": {"directory": "out", "probes": [0.1, 0.3, 0.5, 0.8]},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass(frozen=True)
class RunConfig:
    plant: dict
    synthesis: dict
    simulation: dict
    output: dict

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        if data is not None and not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping")
        merged = _merge(DEFAULTS, data or {})
        sign = merged["synthesis"]["feedback_sign"]
        if sign not in (1, -1):
            raise ConfigError("synthesis.feedback_sign must be +1 or -1")
        return cls(**merged)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}") from None
        try:
            return cls.from_dict(yaml.safe_load(text))
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML: {exc}") from None

    def with_overrides(self, **sim) -> "RunConfig":
        s = dict(self.simulation)
        s.update({k: v for k, v in sim.items() if v is not None})
        return RunConfig(self.plant, self.synthesis, s, self.output)

    def with_plant(self, **plant) -> "RunConfig":
        p = dict(self.plant)
        p.update(plant)
        return RunConfig(p, self.synthesis, self.simulation, self.output)

    def plant_spec(self) -> PlantSpec:
        return plant_from_dict(self.plant)

    @property
    def poles(self):
        p = self.synthesis["poles"]
        return None if p is None else [complex(v) if isinstance(v, str) else v for v in p]

    @property
    def Q(self):
        q = self.synthesis["Q"]
        return None if q is None else np.array(q, dtype=float)
