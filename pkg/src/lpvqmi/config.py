"""Experiment configuration: JSON schema, presets and materialisation."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import builtin
from .data import NoiseBound, phi_energy, phi_per_sample
from .lpv import LpvaPlant, ParamPolytope, TimeDomain
from .synthesis import Mode, PerformanceSpec


class ConfigError(ValueError):
    """Configuration is malformed or inconsistent."""


_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["plant", "mode"],
    "properties": {
        "name": {"type": "string"},
        "plant": {"oneOf": [
            {"enum": list(builtin.PLANT_NAMES)},
            {"type": "object", "additionalProperties": False, "required": ["A_list", "B"],
             "properties": {"A_list": {"type": "array", "items": _matrix, "minItems": 1},
                            "B": _matrix}},
        ]},
        "ground_truth_seed": {"type": "integer", "minimum": 0},
        "polytope": {"type": "array", "items": _vector, "minItems": 1},
        "mode": {"enum": [m.value for m in Mode]},
        "noise": {"oneOf": [
            {"type": "object", "additionalProperties": False, "required": ["kind", "eps"],
             "properties": {"kind": {"const": "per-sample"},
                            "eps": {"type": "number", "minimum": 0}}},
            {"type": "object", "additionalProperties": False, "required": ["kind", "Q"],
             "properties": {"kind": {"const": "energy"}, "Q": _matrix}},
        ]},
        "T": _count,
        "seed": {"type": "integer", "minimum": 0},
        "excitation": _pos,
        "sample_time": _pos,
        "data_mean_dwell": _pos,
        "performance": {"type": "object", "additionalProperties": False,
                        "required": ["C", "D", "F"],
                        "properties": {"C": _matrix, "D": _matrix, "F": _matrix}},
        "simulation": {"type": "object", "additionalProperties": False, "properties": {
            "x0": _vector, "horizon": _pos, "mean_dwell": _pos, "plants": _count,
            "sequences": _count, "step": _pos}},
        "h2_estimate": {"type": "object", "additionalProperties": False, "properties": {
            "param_trajs": _count, "noise_trials": {"type": "integer", "minimum": 2},
            "horizon": _pos}},
        "common_gain": {"type": "boolean"},
        "trace_normalize": {"type": "boolean"},
    },
}

PRESETS = {
    "two-state-ct": {"plant": "two-state", "mode": "ct-stab", "T": 35,
                     "noise": {"kind": "per-sample", "eps": 0.1}, "seed": 0,
                     "simulation": {"x0": [-2.0, 1.5], "horizon": 3.0, "mean_dwell": 0.05,
                                    "plants": 15, "sequences": 30}},
    "two-state-dt": {"plant": "two-state", "mode": "dt-stab", "T": 35,
                     "noise": {"kind": "per-sample", "eps": 0.1}, "seed": 0,
                     "simulation": {"x0": [-2.0, 1.5], "horizon": 20, "mean_dwell": 1.0,
                                    "plants": 15, "sequences": 30}},
    "two-state-h2": {"plant": "two-state", "mode": "dt-h2", "T": 35,
                     "noise": {"kind": "per-sample", "eps": 0.1}, "seed": 0,
                     "simulation": {"x0": [-2.0, 1.5], "horizon": 20, "mean_dwell": 1.0,
                                    "plants": 15, "sequences": 30},
                     "h2_estimate": {"param_trajs": 30, "noise_trials": 200, "horizon": 200}},
    "five-state": {"plant": "five-state", "mode": "dt-stab", "T": 50,
                   "noise": {"kind": "per-sample", "eps": 0.1}, "seed": 0, "excitation": 3.0,
                   "simulation": {"x0": [1.0, 1.0, 1.0, 1.0, 1.0], "horizon": 20,
                                  "mean_dwell": 1.0, "plants": 15, "sequences": 30}},
}


@dataclass
class ExperimentConfig:
    """A validated experiment description with defaults filled in."""

    raw: dict

    def __post_init__(self):
        try:
            jsonschema.validate(self.raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config field {where}: {exc.message}") from None
        self._plant, self._polytope = self._build_plant()
        perf = self.performance
        if perf is not None:
            try:
                perf.check(self._plant.n, self._plant.m)
            except ValueError as exc:
                raise ConfigError(f"config field performance: {exc}") from None
        x0 = self.raw.get("simulation", {}).get("x0")
        if x0 is not None and len(x0) != self._plant.n:
            raise ConfigError(f"config field simulation.x0: expected {self._plant.n} entries")

    @classmethod
    def load(cls, source):
        """Preset name, path to a JSON file, or a dict."""
        if isinstance(source, dict):
            return cls(copy.deepcopy(source))
        if source in PRESETS:
            return cls(copy.deepcopy(PRESETS[source]) | {"name": source})
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config {source!r} is neither a preset nor a file")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls(raw)

    def override(self, **flags):
        """Copy with command-line overrides applied (``None`` means unset)."""
        raw = copy.deepcopy(self.raw)
        sim = raw.setdefault("simulation", {})
        for key in ("mode", "seed", "common_gain", "trace_normalize"):
            if flags.get(key) is not None:
                raw[key] = flags[key]
        if flags.get("noise_eps") is not None:
            raw["noise"] = {"kind": "per-sample", "eps": flags["noise_eps"]}
        for key in ("horizon", "plants", "sequences"):
            if flags.get(key) is not None:
                sim[key] = flags[key]
        return ExperimentConfig(raw)

    def _build_plant(self):
        spec = self.raw["plant"]
        domain = self.mode.domain
        if isinstance(spec, str):
            plant, poly = builtin.builtin_plant(spec, domain, self.raw.get("ground_truth_seed"))
        else:
            try:
                plant = LpvaPlant(np.array(spec["A_list"]), np.array(spec["B"]), domain)
            except ValueError as exc:
                raise ConfigError(f"config field plant: {exc}") from None
            poly = None
        if "polytope" in self.raw:
            try:
                poly = ParamPolytope(np.array(self.raw["polytope"]))
            except ValueError as exc:
                raise ConfigError(f"config field polytope: {exc}") from None
        if poly is None:
            raise ConfigError("config field polytope: required for an inline plant")
        if poly.L != plant.L:
            raise ConfigError(f"config field polytope: vertices have dimension {poly.L}, "
                              f"plant has L = {plant.L}")
        return plant, poly

    @property
    def name(self):
        return self.raw.get("name", "custom")

    @property
    def mode(self) -> Mode:
        return Mode(self.raw["mode"])

    @property
    def domain(self) -> TimeDomain:
        return self.mode.domain

    @property
    def plant(self) -> LpvaPlant:
        return self._plant

    @property
    def polytope(self) -> ParamPolytope:
        return self._polytope

    @property
    def T(self):
        return self.raw.get("T", 35)

    @property
    def seed(self):
        return self.raw.get("seed", 0)

    @property
    def noise(self):
        return self.raw.get("noise", {"kind": "per-sample", "eps": 0.1})

    @property
    def noise_eps(self):
        """Per-sample radius used to draw noise (energy bounds spread ``sqrt(tr Q / T)``)."""
        noise = self.noise
        if noise["kind"] == "per-sample":
            return noise["eps"]
        return float(np.sqrt(max(np.trace(np.array(noise["Q"])), 0.0) / self.T))

    def noise_bound(self, T=None) -> NoiseBound:
        """Bound used for synthesis; a zero radius is replaced by a 1e-9 floor."""
        T = T or self.T
        noise = self.noise
        if noise["kind"] == "per-sample":
            return phi_per_sample(max(noise["eps"], 1e-9), T, self.plant.n)
        Q = np.array(noise["Q"], dtype=float)
        if Q.shape != (self.plant.n, self.plant.n):
            raise ConfigError("config field noise.Q: must be n×n")
        return phi_energy(Q, T)

    @property
    def excitation(self):
        return self.raw.get("excitation", 1.0)

    @property
    def sample_time(self):
        return self.raw.get("sample_time", 0.05)

    @property
    def data_mean_dwell(self):
        default = 0.05 if self.domain is TimeDomain.CONTINUOUS else 1.0
        return self.raw.get("data_mean_dwell", default)

    @property
    def performance(self):
        if "performance" in self.raw:
            p = self.raw["performance"]
            return PerformanceSpec(np.array(p["C"]), np.array(p["D"]), np.array(p["F"]))
        if not self.mode.is_h2:
            return None
        if self.raw["plant"] == "two-state":
            return PerformanceSpec(*builtin.two_state_h2_spec())
        n, m = self.plant.n, self.plant.m
        return PerformanceSpec(np.vstack([np.eye(n), np.zeros((m, n))]),
                               np.vstack([np.zeros((n, m)), np.eye(m)]), np.eye(n))

    def sim(self, key):
        ct = self.domain is TimeDomain.CONTINUOUS
        defaults = {"x0": [1.0] * self.plant.n, "horizon": 3.0 if ct else 20,
                    "mean_dwell": 0.05 if ct else 1.0, "plants": 15, "sequences": 30,
                    "step": 0.01}
        return self.raw.get("simulation", {}).get(key, defaults[key])

    def h2(self, key):
        defaults = {"param_trajs": 30, "noise_trials": 200, "horizon": 200}
        return self.raw.get("h2_estimate", {}).get(key, defaults[key])

    @property
    def common_gain(self):
        return self.raw.get("common_gain", False)

    @property
    def trace_normalize(self):
        return self.raw.get("trace_normalize", False)
