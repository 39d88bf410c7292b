"""Run configuration: a key = value text file plus flag overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

# key: (default, description). The type of the default fixes the parser.
DEFAULTS: dict = {
    "n0": (2, "base block parameter"),
    "levels": (3, "level l of the cached complex"),
    "depth": (8, "number of schedule stages (>= levels; deeper stages feed lg(r))"),
    "toy_mode": (True, "m = 3 subdivision instead of m ~ 32n"),
    "subdivision": (0, "fixed odd multiple of 3 for every stage; 0 keeps the mode default"),
    "max_cells": (2_000_000, "cell enumeration guard"),
    "seed": (0, "master seed"),
    "delta": (0.02, "relative gap tolerance of the distance oracle"),
    "trials": (200, "doubling trials"),
    "samples": (4000, "Monte-Carlo samples per doubling ball"),
    "triples": (1000, "metric-axiom triples and pairs"),
    "ball_r": (0.2, "ball-shape radius"),
    "ball_l": (1, "ball-shape projection level"),
    "ball_samples": (1000, "ball-shape samples"),
    "centers": (10, "path-check centers"),
    "path_r": (0.1, "configuration radius for path checks"),
    "path_eps": (0.5, "configuration resolution for path checks"),
    "density_eps": (0.1, "configuration resolution for the density check"),
    "density_points": (1000, "ball points in the density check"),
    "tol": (1e-8, "Dirichlet solver tolerance"),
    "ladder": ("48,96,192", "annulus grid ladder (intervals per side)"),
    "radial_ladder": ("32,64,128", "spherical shell grid ladder"),
    "etas": ("0.25,0.5,1.0", "inner boundary means"),
    "s_fractions": ("6,12", "s = side / value"),
    "cap_c": (0.5, "cap radius factor for the l2 datum"),
    "components": (8, "l2 truncation dimension m"),
    "functions": (5, "random MacShane functions per experiment"),
    "macshane_count": (8, "centers per MacShane function (orthogonality)"),
    "collapse_count": (64, "centers per MacShane function (collapse)"),
    "cell_ladder": ("2,4,8", "grid intervals per subcell for piecewise solves"),
    "harmonic_levels": ("1,2", "levels of the piecewise approximations"),
    "collapse_levels": (2, "max level L of the collapse sweep"),
    "collapse_subdivision": (9, "subdivision factor of the collapse schedule"),
    "eps": (0.5, "bad-cube resolution"),
    "collapse_bound": (1.0, "bound on partial sums / glip^2"),
    "diff_levels": (4, "complex level of the decay experiment"),
    "diff_samples": (200, "points in the decay experiment"),
    "diff_eps": (0.5, "configuration resolution of the decay experiment"),
    "radii": ("1/3,1/9,1/27,1/81", "decay radii ladder"),
    "tangent_n0": (100, "n0 of the full-scale tangent schedule"),
    "tangent_samples": (200_000, "candidates per color in the tangent box"),
    "gate_trials": (20_000, "points in the gate-hitting experiment"),
    "blocks": (3, "blocks in the gate-hitting experiment"),
    "output_dir": ("out", "report directory"),
    "cache_dir": (".diamondspace-cache", "complex cache directory"),
    "workers": (1, "worker processes for `run all`"),
}

# keys that do not change any computed value
_UNHASHED = {"output_dir", "cache_dir", "workers"}

POSITIVE = {"trials", "samples", "triples", "ball_samples", "centers", "density_points",
            "functions", "macshane_count", "collapse_count", "diff_samples", "tangent_samples",
            "gate_trials", "blocks", "workers", "components", "collapse_levels"}


class ConfigError(ValueError):
    """Invalid configuration key or value (a usage error)."""


def _parse(key: str, raw: str) -> Any:
    default = DEFAULTS[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_list(raw: str, kind=float) -> list:
    out = []
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        if "/" in part and kind is float:
            a, b = part.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(kind(part))
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[0] for k, v in DEFAULTS.items()})

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def update(self, key: str, raw: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _parse(key, raw) if isinstance(raw, str) else raw
        self.validate_key(key)

    def validate_key(self, key: str) -> None:
        v = self.values[key]
        if key in POSITIVE and v <= 0:
            raise ConfigError(f"{key} must be positive, got {v}")

    def validate(self) -> None:
        for k in self.values:
            self.validate_key(k)
        if self.values["levels"] < 0:
            raise ConfigError("levels must be non-negative")
        if self.values["depth"] < self.values["levels"]:
            self.values["depth"] = self.values["levels"]

    def hashed(self) -> dict:
        return {k: v for k, v in sorted(self.values.items()) if k not in _UNHASHED}

    def config_hash(self) -> str:
        blob = json.dumps(self.hashed(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def complex_key(self) -> str:
        keys = ("n0", "levels", "depth", "toy_mode", "subdivision", "max_cells")
        blob = json.dumps({k: self.values[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file, then overrides (flags win)."""
    cfg = RunConfig()
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        for lineno, line in enumerate(p.read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            cfg.update(k.strip(), v)
    for k, v in (overrides or {}).items():
        cfg.update(k, v)
    cfg.validate()
    return cfg
