"""Experiment configuration: strict JSON schema, defaults, canonical form."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from ..exceptions import ConfigError

EXPERIMENTS = ("sysid-single", "sysid-multi", "online-regret", "lowerbound")
ESTIMATORS = ("ml", "single-gap", "constant-base", "constant-mid")

_matrix = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "array", "minItems": 1, "items": {"type": "number"}},
}
_pos_grid = {
    "type": "array",
    "minItems": 1,
    "items": {"type": "number", "exclusiveMinimum": 0},
}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "p": {"type": "integer", "minimum": 1},
                "A": {"oneOf": [{"enum": ["uniform", "stable"]}, _matrix]},
                "stable_margin": {"type": "number", "exclusiveMinimum": 0},
                "B": {"oneOf": [{"const": "identity"}, _matrix]},
                "Q": {"oneOf": [{"const": "identity"}, _matrix]},
                "R": {"oneOf": [{"const": "identity"}, _matrix]},
                "K": {"oneOf": [{"const": "auto"}, _matrix]},
            },
        },
        "h": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
        "T_grid": _pos_grid,
        "H_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        "T0": {"type": "integer", "minimum": 1, "maximum": 10},
        "episodes": {"type": "integer", "minimum": 1},
        "sigma": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string", "minLength": 1},
        "threads": {"type": "integer", "minimum": 1},
        "lowerbound": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N_grid": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
                "mc_N": {"type": "integer", "minimum": 1},
                "mc_paths": {"type": "integer", "minimum": 2},
                "risk_T": {"type": "number", "exclusiveMinimum": 0},
                "risk_N": {"type": "integer", "minimum": 2},
                "trials": {"type": "integer", "minimum": 100},
                "estimators": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"enum": list(ESTIMATORS)},
                },
            },
        },
    },
}

_DEFAULT_SYSTEM = {
    "d": 3,
    "p": 3,
    "stable_margin": 0.5,
    "B": "identity",
    "Q": "identity",
    "R": "identity",
    "K": "auto",
}
_DEFAULT_LOWERBOUND = {
    "N_grid": [1, 2, 4, 8, 16, 32, 64, 128, 256, 512],
    "mc_N": 128,
    "mc_paths": 100000,
    "risk_T": 4.0,
    "risk_N": 400,
    "trials": 10000,
    "estimators": list(ESTIMATORS),
}
_DEFAULT_EPISODES = {"sysid-single": 20, "sysid-multi": 20, "online-regret": 50, "lowerbound": 1}


def _path(parts) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


@dataclass
class ExperimentConfig:
    experiment: str
    system: dict
    h: Any
    T_grid: Optional[list]
    H_grid: Optional[list]
    T0: int
    episodes: int
    sigma: float
    seed: int
    output_dir: str
    threads: int
    lowerbound: Optional[dict] = None
    source: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        d = {
            "experiment": self.experiment,
            "system": copy.deepcopy(self.system),
            "h": self.h,
            "T0": self.T0,
            "episodes": self.episodes,
            "sigma": self.sigma,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "threads": self.threads,
        }
        if self.T_grid is not None:
            d["T_grid"] = list(self.T_grid)
        if self.H_grid is not None:
            d["H_grid"] = list(self.H_grid)
        if self.lowerbound is not None:
            d["lowerbound"] = copy.deepcopy(self.lowerbound)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def sha256(self) -> str:
        # threads and output_dir do not change results
        d = self.to_dict()
        d.pop("threads")
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def matrix(self, name: str) -> Optional[np.ndarray]:
        """Explicit matrix ``name`` from the system block, identity-expanded, or None."""
        v = self.system.get(name)
        d, p = self.system["d"], self.system["p"]
        if v == "identity":
            return np.eye(*{"B": (d, p), "Q": (d, d), "R": (p, p)}[name])
        if isinstance(v, list):
            return np.asarray(v, dtype=float)
        return None


def _check_matrix_shape(M, shape, where):
    rows = len(M)
    cols = {len(r) for r in M}
    if len(cols) != 1:
        raise ConfigError("rows have different lengths", where)
    if (rows, cols.pop()) != shape:
        raise ConfigError(f"expected shape {shape[0]}x{shape[1]}", where)
    if not all(math.isfinite(v) for r in M for v in r):
        raise ConfigError("entries must be finite", where)


def _check_increasing(grid, where):
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("grid must be strictly increasing", where)


def from_dict(raw: Any, source: Optional[str] = None) -> ExperimentConfig:
    """Validate ``raw`` against the schema and fill defaults.

    Raises
    ------
    ConfigError
        With a ``$.field`` path naming the offending entry.
    """
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        where = list(e.absolute_path)
        if e.validator == "additionalProperties":
            extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
            raise ConfigError("unknown key", _path(where + extra[:1]))
        raise ConfigError(e.message, _path(where))

    exp = raw["experiment"]
    system = dict(_DEFAULT_SYSTEM)
    system["A"] = "uniform" if exp == "online-regret" else "stable"
    system.update(raw.get("system", {}))
    d, p = system["d"], system["p"]
    for name, shape in (("A", (d, d)), ("B", (d, p)), ("Q", (d, d)), ("R", (p, p)), ("K", (p, d))):
        if isinstance(system[name], list):
            _check_matrix_shape(system[name], shape, f"$.system.{name}")
    if system["B"] == "identity" and d != p:
        raise ConfigError("identity B needs d == p", "$.system.B")

    T_grid = raw.get("T_grid")
    H_grid = raw.get("H_grid")
    if exp in ("sysid-single", "online-regret") and T_grid is None:
        raise ConfigError(f"required for experiment {exp}", "$.T_grid")
    if exp == "sysid-multi" and H_grid is None:
        raise ConfigError("required for experiment sysid-multi", "$.H_grid")
    if exp == "lowerbound" and T_grid is None:
        T_grid = [1, 4, 16]
    if exp == "online-regret" and any(t < 1 for t in T_grid):
        raise ConfigError("online horizons must be >= 1", "$.T_grid")
    if T_grid is not None:
        T_grid = [float(t) for t in T_grid]
        _check_increasing(T_grid, "$.T_grid")
    if H_grid is not None:
        _check_increasing(H_grid, "$.H_grid")

    lowerbound = None
    if exp == "lowerbound":
        lowerbound = dict(_DEFAULT_LOWERBOUND)
        lowerbound.update(raw.get("lowerbound", {}))
        lowerbound["risk_T"] = float(lowerbound["risk_T"])
        _check_increasing(lowerbound["N_grid"], "$.lowerbound.N_grid")
    elif "lowerbound" in raw:
        raise ConfigError("only valid for experiment lowerbound", "$.lowerbound")

    h = raw.get("h", 1.0 / 30.0)
    return ExperimentConfig(
        experiment=exp,
        system=system,
        h=h if h == "auto" else float(h),
        T_grid=T_grid,
        H_grid=H_grid,
        T0=int(raw.get("T0", 2)),
        episodes=int(raw.get("episodes", _DEFAULT_EPISODES[exp])),
        sigma=float(raw.get("sigma", 1.0)),
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")),
        threads=int(raw.get("threads", 1)),
        lowerbound=lowerbound,
        source=source,
    )


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "$") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "$") from None
    return from_dict(raw, source=str(path))
