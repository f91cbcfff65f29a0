"""Trend verdicts over n-ladders of (n, estimate, SE) triples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError

VERDICTS = ("decreasing-outside-2SE", "flat", "increasing", "inconclusive")
SCALING_VERDICTS = ("bounded", "unbounded")
_Z95 = 1.959963984540054


@dataclass(frozen=True)
class TrendReport:
    observable: str
    points: tuple[tuple[int, float, float], ...]
    verdict: str
    exponent: float | None = None  # decay exponent b in |estimate| ~ n^-b
    exponent_ci: tuple[float, float] | None = None
    group: dict = field(default_factory=dict)
    absolute: bool = False
    ratio: float | None = None  # max/min spread, scaling reports only

    @property
    def decreasing(self) -> bool:
        return self.verdict == "decreasing-outside-2SE"

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "group": self.group,
            "absolute": self.absolute,
            "points": [{"n": n, "estimate": e, "se": s} for n, e, s in self.points],
            "verdict": self.verdict,
            "exponent": self.exponent,
            "exponent_ci": list(self.exponent_ci) if self.exponent_ci else None,
            "ratio": self.ratio,
        }


def _ordered(points) -> list[tuple[int, float, float]]:
    pts = sorted((int(n), float(e), float(s)) for n, e, s in points)
    if len({n for n, _, _ in pts}) != len(pts):
        raise ValidationError("ladder has repeated n")
    return pts


def classify(points) -> str:
    """Verdict from the 2-SE rule on successive ladder points.

    Each step compares e_{k+1} - e_k against 2 sqrt(se_k^2 + se_{k+1}^2).
    """
    pts = _ordered(points)
    if len(pts) < 2 or any(not (math.isfinite(e) and math.isfinite(s)) for _, e, s in pts):
        return "inconclusive"
    steps = []
    for (_, e0, s0), (_, e1, s1) in zip(pts, pts[1:]):
        tol = 2.0 * math.hypot(s0, s1)
        steps.append(-1 if e1 < e0 - tol else (1 if e1 > e0 + tol else 0))
    if all(s == -1 for s in steps):
        return "decreasing-outside-2SE"
    if all(s == 1 for s in steps):
        return "increasing"
    if all(s == 0 for s in steps):
        return "flat"
    return "inconclusive"


def fit_exponent(points) -> tuple[float | None, tuple[float, float] | None]:
    """Weighted least squares of log|e| on log n; returns (-slope, 95% CI)."""
    pts = [(n, abs(e), s) for n, e, s in _ordered(points) if e != 0 and math.isfinite(e)]
    if len(pts) < 2:
        return None, None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    sig = np.array([p[2] / p[1] for p in pts])  # delta-method SE of log|e|
    if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
        coef = np.polyfit(x, y, 1)
        return float(-coef[0]), None
    coef, cov = np.polyfit(x, y, 1, w=1.0 / sig, cov="unscaled")
    half = _Z95 * math.sqrt(cov[0, 0])
    b = float(-coef[0])
    return b, (b - half, b + half)


def trend_report(observable: str, points, group: dict | None = None, absolute: bool = False) -> TrendReport:
    pts = _ordered(points)
    if absolute:
        pts = [(n, abs(e), s) for n, e, s in pts]
    b, ci = fit_exponent(pts)
    return TrendReport(observable, tuple(pts), classify(pts), b, ci, dict(group or {}), absolute)


def var_fn_scaling(points, factor: float = 4.0, observable: str = "var-Fn-scaling",
                   group: dict | None = None) -> TrendReport:
    """Var(F_n)/|V_n| ladder: "bounded" iff max/min of the ratio is below ``factor``."""
    pts = _ordered(points)
    if len(pts) < 3:
        raise ValidationError(f"var-Fn scaling needs at least 3 ladder points, got {len(pts)}")
    vals = np.array([e for _, e, _ in pts])
    if np.all(vals == 0):
        ratio = 1.0
    elif np.any(vals <= 0):
        ratio = math.inf
    else:
        ratio = float(vals.max() / vals.min())
    b, ci = fit_exponent(pts)
    return TrendReport(observable, tuple(pts), "bounded" if ratio < factor else "unbounded", b, ci,
                       dict(group or {}), False, ratio)
