"""YAML run configuration with defaults and dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .data import ColumnSchema
from .em import EstimationConfig
from .model import ModelSpec
from .synthetic import SyntheticScenario


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "data": {
        "schema": {
            "person_id": "person_id",
            "obs_id": "obs_id",
            "alt_id": "alt_id",
            "chosen": "chosen",
            "avail": "avail",
            "attributes": None,
        },
    },
    "model": {
        "fixed": [],
        "random": [],
        "variant": "unequal",
        "counts": [],
        "n_classes": None,
        "constraints": {},
    },
    "estimation": {
        "tol": 1e-6,
        "paper_convergence": False,
        "max_iter": 2000,
        "seed": 0,
        "start": "random",
        "empty_class_threshold": 1e-8,
        "gamma_floor": 1e-12,
        "inner_max_iter": 500,
        "inner_gtol": 1e-6,
        "standard_errors": False,
    },
    "wtp": {
        "time": [],  # entries {dim: name, unit: hour|minute}
        "cost": None,
        "cost_income": None,
        "income": None,
    },
    "analysis": {
        "nonattendance_epsilon": 0.01,
        "asc": [],
        "asc_threshold": -5.0,
    },
    "simulate": {
        "experiment": 1,
        "kind": "normal",
        "n_persons": 1000,
        "n_obs": 10,
        "seed": 42,
        "scale": 1.0,
        "noise": True,
    },
}

# sections whose keys are free-form
_OPEN = {("model", "constraints")}


def _merge(base: dict, extra: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in (extra or {}).items():
        here = path + (key,)
        if key not in out and path not in _OPEN:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(out.get(key), dict) and isinstance(val, dict) and here not in _OPEN:
            out[key] = _merge(out[key], val, here)
        else:
            out[key] = val
    return out


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    value = yaml.safe_load(raw) if raw.strip() else None
    patch: dict = {}
    node = patch
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return _merge(cfg, patch)


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        cfg = _merge(cfg, loaded)
    for item in overrides or ():
        cfg = apply_override(cfg, item)
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=False)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def schema_from(cfg: dict) -> ColumnSchema:
    try:
        return ColumnSchema.from_mapping(cfg["data"]["schema"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def model_spec_from(cfg: dict) -> ModelSpec:
    m = cfg["model"]
    try:
        return ModelSpec.from_dict(m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model section: {exc}") from None


def estimation_config_from(cfg: dict) -> EstimationConfig:
    e = dict(cfg["estimation"])
    try:
        e["tol"] = float(e["tol"])
        e["empty_class_threshold"] = float(e["empty_class_threshold"])
        e["gamma_floor"] = float(e["gamma_floor"])
        e["inner_gtol"] = float(e["inner_gtol"])
        return EstimationConfig(**e)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid estimation section: {exc}") from None


def scenario_from(cfg: dict) -> SyntheticScenario:
    s = cfg["simulate"]
    try:
        return SyntheticScenario(
            experiment=int(s["experiment"]),
            n_persons=int(s["n_persons"]),
            n_obs=int(s["n_obs"]),
            kind=str(s["kind"]),
            seed=int(s["seed"]),
            scale=float(s["scale"]),
            noise=bool(s["noise"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulate section: {exc}") from None
