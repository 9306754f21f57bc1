"""Shared report records and deterministic JSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, is_dataclass, asdict
from typing import Any

import numpy as np


@dataclass
class EstimateReport:
    """Generic verification record: per-item measurements, fitted constants,
    and a pass/fail verdict with the worst offender pinned."""

    name: str
    entries: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    verdict: bool = True
    worst: dict = field(default_factory=dict)
    notes: str = ""


def _canonical(obj: Any) -> Any:
    """Map numpy/dataclass payloads to plain JSON types, floats rounded to a
    fixed decimal representation so identical runs serialize identically."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return _canonical(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _canonical(obj[k]) for k in sorted(obj, key=str)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.12g}")
    if isinstance(obj, complex):
        return {"re": _canonical(obj.real), "im": _canonical(obj.imag)}
    return obj


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, fixed float precision, no whitespace
    variation. Byte-identical for equal payloads."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2,
                      ensure_ascii=True)


def write_json(path, obj: Any) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x (positive data only)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    return float(np.polyfit(lx, ly, 1)[0])
