"""Experiment configuration: a JSON document with one family block and an ordered experiment list."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .families import FAMILIES


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field '{field_name}'")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.line, self.field = line, field_name


EXPERIMENTS = (
    "build-family",
    "verify-cones",
    "critical-set",
    "annulus-check",
    "growth",
    "covering",
    "preorbit-density",
    "orbit-density",
    "fixed-points",
    "intersection-constants",
    "transitivity",
    "whitney-flatten",
    "whitney-collapse",
    "manifold-density",
)

# per-experiment options and their defaults (None: filled from the family)
DEFAULTS = {
    "build-family": {},
    "verify-cones": {"resolution": 1024, "global_resolution": 256, "stable_resolution": 256},
    "critical-set": {"resolution": 256},
    "annulus-check": {"samples": 10000, "steps": 9},
    "growth": {"steps": 10, "lambda_prime": None},
    "covering": {"eps": None, "grid": 64, "sample": 200000},
    "preorbit-density": {"depth": 10, "eps": 0.05, "grid_res": 32, "targets": 5, "prune_res": 128},
    "orbit-density": {"N": 1000000, "eps": 0.05, "grid_res": 32, "jitter": 1e-12},
    "fixed-points": {"seeds": 48},
    "intersection-constants": {"samples": 1000},
    "transitivity": {"pairs": 5, "radius": 0.1, "budget": 200},
    "whitney-flatten": {"eps": 0.1, "classify_points": 100},
    "whitney-collapse": {"eps": 0.1},
    "manifold-density": {"unstable_iterations": 30, "stable_depth": 20, "eps": 0.05, "grid_res": 32},
}

# experiments that make sense for each family kind
APPLICABLE = {
    "expanding": [e for e in EXPERIMENTS if e not in ("intersection-constants", "manifold-density")],
    "saddle": [e for e in EXPERIMENTS if e not in ("annulus-check", "covering", "manifold-density")],
    "nonhyperbolic": [e for e in EXPERIMENTS if e not in ("annulus-check", "covering", "preorbit-density", "intersection-constants")],
}

TOP_LEVEL = {"family", "experiments", "seed", "output", "plots"}


@dataclass
class ExperimentConfig:
    family: dict
    experiments: list  # [(name, options)]
    seed: int = 0
    output: str = "endolab-out"
    plots: bool = True
    source: str | None = None
    effective: dict = field(default_factory=dict)

    @property
    def family_kind(self) -> str:
        name = self.family.get("name") or self.family.get("family")
        return FAMILIES[name][0] if name in FAMILIES else name

    def family_args(self) -> dict:
        d = dict(self.family)
        d["family"] = d.pop("name", None) or d.pop("family")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.effective, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _check_number(v, key, text, positive=False, integer=False, label=None):
    label = label or key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", _line_of(text, key), label)
    if not math.isfinite(v):
        raise ConfigError("must be finite", _line_of(text, key), label)
    if integer and int(v) != v:
        raise ConfigError(f"expected an integer, got {v!r}", _line_of(text, key), label)
    if positive and v <= 0:
        raise ConfigError(f"must be positive, got {v!r}", _line_of(text, key), label)


def parse_config(data: dict, text: str | None = None) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    unknown = set(data) - TOP_LEVEL
    if unknown:
        k = sorted(unknown)[0]
        raise ConfigError(f"unknown key; expected one of {sorted(TOP_LEVEL)}", _line_of(text, k), k)
    fam = data.get("family")
    if isinstance(fam, str):
        fam = {"name": fam}
    if not isinstance(fam, dict) or not (fam.get("name") or fam.get("family")):
        raise ConfigError("a family block with a 'name' is required", _line_of(text, "family"), "family")
    fam = copy.deepcopy(fam)
    name = fam.get("name") or fam.get("family")
    kinds = {v[0] for v in FAMILIES.values()}
    if name not in FAMILIES and name not in kinds:
        raise ConfigError(f"unknown family {name!r}; expected one of {sorted(FAMILIES)} or {sorted(kinds)}", _line_of(text, "name"), "name")
    for k, v in fam.items():
        if k in ("name", "family", "phi_kind"):
            continue
        vals = v if isinstance(v, (list, tuple)) else [v]
        for x in vals:
            _check_number(x, k, text)
    seed = data.get("seed", 0)
    _check_number(seed, "seed", text, integer=True)
    output = data.get("output", "endolab-out")
    if not isinstance(output, str) or not output:
        raise ConfigError("output must be a non-empty path", _line_of(text, "output"), "output")
    plots = data.get("plots", True)
    if not isinstance(plots, bool):
        raise ConfigError("plots must be true or false", _line_of(text, "plots"), "plots")
    kind = FAMILIES[name][0] if name in FAMILIES else name
    raw = data.get("experiments", APPLICABLE[kind])
    if not isinstance(raw, list):
        raise ConfigError("experiments must be a list", _line_of(text, "experiments"), "experiments")
    exps = []
    for item in raw:
        if isinstance(item, str):
            ename, opts = item, {}
        elif isinstance(item, dict) and isinstance(item.get("name"), str):
            ename, opts = item["name"], {k: v for k, v in item.items() if k != "name"}
        else:
            raise ConfigError(f"experiment entries are names or objects with a 'name', got {item!r}", _line_of(text, "experiments"), "experiments")
        if ename not in DEFAULTS:
            raise ConfigError(f"unknown experiment {ename!r}", _line_of(text, ename), "experiments")
        merged = dict(DEFAULTS[ename])
        for k, v in opts.items():
            if k not in merged:
                raise ConfigError(f"unknown option for {ename}; expected one of {sorted(merged)}", _line_of(text, k), f"{ename}.{k}")
            _check_number(v, k, text, positive=k not in ("jitter",), label=f"{ename}.{k}")
            merged[k] = v
        exps.append((ename, merged))
    effective = {"family": fam, "experiments": [dict(name=n, **o) for n, o in exps], "seed": int(seed), "output": output, "plots": plots}
    return ExperimentConfig(fam, exps, int(seed), output, plots, text, effective)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, e.lineno) from e
    cfg = parse_config(data, text)
    # relative outputs live next to the config file
    if not Path(cfg.output).is_absolute():
        cfg.output = str(p.parent / cfg.output)
    return cfg
