"""Experiment reports: rows of statistics plus a JSON summary."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

REPORT_VERSION = 1
CSV_COLUMNS = ["run_id", "level", "params", "statistic", "value", "tolerance", "pass"]


def _clean(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(v)
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.generic):
        return _clean(v.item())
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


@dataclass
class ExperimentReport:
    name: str
    params: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = True
    seed: Optional[int] = None

    def add(self, statistic: str, value: Any, tolerance: Any = None,
            ok: Optional[bool] = None, level: Optional[int] = None, **params) -> None:
        self.rows.append({
            "level": level,
            "params": params,
            "statistic": statistic,
            "value": value,
            "tolerance": tolerance,
            "pass": ok,
        })
        if ok is False:
            self.passed = False

    def check(self, statistic: str, value, tolerance, ok: bool, **kw) -> bool:
        self.add(statistic, value, tolerance, bool(ok), **kw)
        return bool(ok)

    def run_id(self, config_hash: str = "") -> str:
        h = hashlib.sha256(f"{self.name}:{config_hash}:{self.seed}".encode()).hexdigest()
        return h[:12]

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        rid = self.run_id(config_hash)
        for r in self.rows:
            params = ";".join(f"{k}={_fmt(_clean(v))}" for k, v in sorted(r["params"].items()))
            w.writerow([rid, _fmt(r["level"]), params, r["statistic"], _fmt(_clean(r["value"])),
                        _fmt(_clean(r["tolerance"])), _fmt(r["pass"])])
        return buf.getvalue()

    def to_json(self, config_hash: str = "") -> str:
        doc = {
            "version": REPORT_VERSION,
            "experiment": self.name,
            "run_id": self.run_id(config_hash),
            "config_hash": config_hash,
            "seed": self.seed,
            "passed": bool(self.passed),
            "params": _clean(self.params),
            "summary": _clean(self.summary),
            "rows": len(self.rows),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def failures(self) -> list:
        return [r for r in self.rows if r["pass"] is False]


def merge(name: str, reports: list, seed=None) -> ExperimentReport:
    out = ExperimentReport(name, seed=seed)
    for rep in reports:
        out.summary[rep.name] = {"passed": rep.passed, **rep.summary}
        for r in rep.rows:
            row = dict(r)
            row["params"] = {"experiment": rep.name, **r["params"]}
            out.rows.append(row)
        out.passed = out.passed and rep.passed
    return out
