"""Experiment configuration: JSON schema, defaults and object builders.

Field names carry their units (``_hz``, ``_w``, ``_m``, ``_dbm_per_hz``).
A config is a JSON object; anything omitted takes the value in ``DEFAULTS``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from .solver import SolverSettings
from .wireless import (
    CellConfig,
    ClientProfile,
    FadingConfig,
    channel_gains,
    place_clients,
    scenario_annuli,
)

SCHEMES = ("proposed", "random", "greedy", "age")

DEFAULTS = {
    "cell": {
        "total_bandwidth_hz": 5e6,
        "noise_density_dbm_per_hz": -174.0,
        "model_size_bits": 6.37e6,
        "cell_radius_m": 1000.0,
    },
    "clients": {
        "K": 10,
        "tx_power_w": 0.2,
        "scenario": 0,
        "n_extreme": 5,
        "profiles": None,
    },
    "fading": {"kind": "none"},
    "task": {
        "kind": "synthetic",
        "C": 10,
        "D": 20,
        "hidden": 32,
        "per_class": 500,
        "test_per_class": 100,
        "d": 5,
        "separation": 3.0,
        "lr": 0.01,
        "batch": 10,
        "local_steps": 5,
    },
    "scheme": {
        "names": ["proposed"],
        "rho": 0.05,
        "lambda_min": 0.01,
        "p_const": 0.5,
        "k_sel": 5,
        "match_participation": True,
    },
    "solver": {},
    "engine": {"force_cap": None, "divide_by_participants": False},
    "rounds": 100,
    "seeds": [0],
    "data_seed": None,
    "placement_seed": None,
    "solve": {"mode": "offline", "T": 5, "horizon": None, "gains": None},
    "bounds": None,
}

_pos = {"type": "number", "exclusiveMinimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_int1 = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "cell": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "total_bandwidth_hz": _pos,
                "noise_density_dbm_per_hz": {"type": "number"},
                "model_size_bits": {"type": ["number", "null"], "minimum": 1},
                "cell_radius_m": _pos,
            },
        },
        "clients": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": _int1,
                "tx_power_w": _pos,
                "scenario": {"enum": [0, 1, 2]},
                "n_extreme": {"type": "integer", "minimum": 0},
                "profiles": {
                    "type": ["array", "null"],
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["id", "distance_km", "tx_power_w"],
                        "properties": {"id": _int1, "distance_km": _pos, "tx_power_w": _pos},
                    },
                },
            },
        },
        "fading": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["none", "rayleigh"]}},
        },
        "task": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["synthetic"]},
                "C": _int1, "D": _int1,
                "hidden": {"type": "integer", "minimum": 0},
                "per_class": _int1, "test_per_class": _int1, "d": _int1,
                "separation": _pos, "lr": _pos, "batch": _int1,
                "local_steps": {"type": "integer", "minimum": 0},
            },
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "names": {"type": "array", "minItems": 1, "uniqueItems": True,
                          "items": {"enum": list(SCHEMES)}},
                "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "lambda_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "p_const": _prob,
                "k_sel": _int1,
                "match_participation": {"type": "boolean"},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: {"type": "number"} if f.type in ("float", float)
                           else {"type": ["integer", "boolean"]}
                           for f in fields(SolverSettings)},
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "force_cap": {"oneOf": [{"type": "null"}, _int1,
                                        {"type": "array", "items": _int1}]},
                "divide_by_participants": {"type": "boolean"},
            },
        },
        "rounds": {"type": "integer", "minimum": 0},
        "seeds": {"type": "array", "minItems": 1,
                  "items": {"type": "integer", "minimum": 0}},
        "data_seed": {"type": ["integer", "null"], "minimum": 0},
        "placement_seed": {"type": ["integer", "null"], "minimum": 0},
        "solve": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["offline", "online"]},
                "T": _int1,
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "gains": {"type": ["array", "null"],
                          "items": {"type": "array", "items": _pos}},
            },
        },
        "bounds": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["L", "G_max", "sigma_sq", "f_max", "eta", "T"],
            "properties": {
                "L": _pos, "G_max": _pos, "sigma_sq": _pos, "f_max": _pos, "eta": _pos,
                "T": _int1,
                "p": {"oneOf": [
                    {"type": "null"},
                    {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    {"type": "array", "items": {"oneOf": [
                        {"type": "number"}, {"type": "array", "items": {"type": "number"}}]}},
                ]},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` is a dotted path."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _check_schema(raw) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    err = jsonschema.exceptions.best_match(validator.iter_errors(raw))
    if err is not None:
        path = ".".join(str(p) for p in err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path = ".".join(filter(None, [path, extra[0] if extra else ""]))
        raise ConfigError(err.message, path or "<root>")


def resolve(raw: dict) -> dict:
    """Validate ``raw`` and fill in defaults; the result is plain JSON data."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "<root>")
    _check_schema(raw)
    cfg = _merge(DEFAULTS, raw)
    _check_schema(cfg)
    K = cfg["clients"]["K"]
    prof = cfg["clients"]["profiles"]
    if prof is not None:
        if [p["id"] for p in prof] != list(range(1, len(prof) + 1)):
            raise ConfigError("profile ids must be 1..K in order", "clients.profiles")
        if "K" in raw.get("clients", {}) and raw["clients"]["K"] != len(prof):
            raise ConfigError(f"K={K} but {len(prof)} profiles given", "clients.K")
        cfg["clients"]["K"] = K = len(prof)
    if cfg["clients"]["scenario"] and cfg["clients"]["n_extreme"] > K:
        raise ConfigError(f"n_extreme exceeds K={K}", "clients.n_extreme")
    cap = cfg["engine"]["force_cap"]
    if isinstance(cap, list) and len(cap) != K:
        raise ConfigError(f"expected {K} caps", "engine.force_cap")
    try:
        SolverSettings(**cfg["solver"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "solver") from None
    gains = cfg["solve"]["gains"]
    if gains is not None and (len(gains) != K or len({len(r) for r in gains}) != 1):
        raise ConfigError(f"gains must be a {K} x T matrix", "solve.gains")
    return cfg


def load_config(source) -> dict:
    """Resolve a config given as a dict or a path to a JSON file."""
    if isinstance(source, dict):
        return resolve(source)
    try:
        raw = json.loads(Path(source).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "<file>") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "<file>") from None
    return resolve(raw)


# ---------------------------------------------------------------- builders

def build_cell(cfg: dict, model_size_bits: float | None = None) -> CellConfig:
    c = cfg["cell"]
    size = c["model_size_bits"] if c["model_size_bits"] is not None else model_size_bits
    if size is None:
        raise ConfigError("model size unknown", "cell.model_size_bits")
    try:
        return CellConfig.from_dbm(c["total_bandwidth_hz"], c["noise_density_dbm_per_hz"],
                                   size, c["cell_radius_m"])
    except ValueError as exc:
        raise ConfigError(str(exc), "cell") from None


def build_profiles(cfg: dict, cell: CellConfig, seed: int) -> list[ClientProfile]:
    cl = cfg["clients"]
    try:
        if cl["profiles"] is not None:
            out = [ClientProfile(**p) for p in cl["profiles"]]
            for p in out:
                p.check_in_cell(cell)
            return out
        pseed = cfg["placement_seed"] if cfg["placement_seed"] is not None else seed
        annuli = scenario_annuli(cl["scenario"], cl["n_extreme"])
        return place_clients(cl["K"], cell, pseed, cl["tx_power_w"], annuli)
    except ValueError as exc:
        raise ConfigError(str(exc), "clients") from None


def build_fading(cfg: dict) -> FadingConfig:
    return FadingConfig(cfg["fading"]["kind"])


def build_task(cfg: dict, seed: int):
    from .task import ClassificationTask, TaskConfigError

    t = {k: v for k, v in cfg["task"].items() if k != "kind"}
    dseed = cfg["data_seed"] if cfg["data_seed"] is not None else seed
    try:
        return ClassificationTask.synthetic(cfg["clients"]["K"], seed=dseed, **t)
    except TaskConfigError as exc:
        raise ConfigError(str(exc), "task") from None


def solver_settings(cfg: dict) -> SolverSettings:
    return SolverSettings(**cfg["solver"])


def solve_gains(cfg: dict, profiles, seed: int) -> np.ndarray:
    """K x T gain matrix for the ``solve`` subcommand."""
    g = cfg["solve"]["gains"]
    if g is not None:
        return np.array(g, dtype=np.float64)
    T = cfg["solve"]["T"] if cfg["solve"]["mode"] == "offline" else 1
    return channel_gains(profiles, range(T), build_fading(cfg), seed)


def bounds_p(cfg: dict) -> np.ndarray:
    """Selection matrix for the ``bounds`` subcommand (K x T)."""
    b = cfg["bounds"]
    K, T = cfg["clients"]["K"], b["T"]
    p = b.get("p")
    p = 1.0 if p is None else p
    try:
        arr = np.asarray(p, dtype=np.float64)
        if arr.ndim == 0:
            return np.full((K, T), float(arr))
        if arr.ndim == 1:
            return np.broadcast_to(arr.reshape(K, 1), (K, T)).copy()
        if arr.shape == (K, T):
            return arr
    except ValueError:
        pass
    raise ConfigError(f"p must be a scalar, a {K}-vector or a {K} x {T} matrix", "bounds.p")
