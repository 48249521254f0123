"""Estimate reports: fitted constants, witnesses and verdicts, serialized
deterministically."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class EstimateReport:
    """Outcome of one empirical check.

    ``constants`` holds fitted or extremal values, ``witness`` where the
    extremum occurred, ``verdicts`` named pass/fail flags, ``skipped``
    counts of excluded grid cells by reason and ``rows`` the raw grid.
    """

    estimate: str
    env_hash: str
    grid: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def skip(self, reason: str, count: int = 1):
        self.skipped[reason] = self.skipped.get(reason, 0) + count

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return _clean(d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> EstimateReport:
        keys = ("estimate", "env_hash", "grid", "constants", "witness", "verdicts", "skipped", "rows")
        return cls(**{k: d[k] for k in keys if k in d})


def merge_reports(reports) -> dict:
    """Combine reports into one document, ordered by estimate id."""
    items = sorted((r.to_dict() for r in reports), key=lambda d: (d["estimate"], d["env_hash"]))
    return {"reports": items, "passed": all(d["passed"] for d in items)}


def ols(x, y) -> dict:
    """Least-squares line y = intercept + slope * x with R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan"), "n": int(len(x))}
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss if ss > 0 else 1.0
    return {"slope": float(coef[1]), "intercept": float(coef[0]), "r2": r2, "n": int(len(x))}


def stable(values, factor: float = 2.0) -> bool:
    """True if the values are finite and positive and each one is within
    ``factor`` of the next (values listed in order of doubling scale)."""
    v = np.asarray(list(values), dtype=float)
    if len(v) == 0 or not np.all(np.isfinite(v)) or np.any(v <= 0):
        return False
    ratios = np.maximum(v[1:] / v[:-1], v[:-1] / v[1:])
    return bool(np.all(ratios <= factor))
