"""Convergence metrics over best-fitness-so-far curves, plus report rendering.

Curves are compared on cumulative morphology evaluations so methods that
spend the budget at different rates are on equal footing. Speedup divides
the eval index at which the baseline first reaches its own endpoint by the
eval index at which the agent first reaches that same value; lead fraction
is the share of the budget where the agent is strictly ahead.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np


class EmptyCurve(ValueError):
    """A fitness curve with no recorded points."""


@dataclass(frozen=True)
class FitnessCurve:
    """Best-so-far points (eval_index, best) under a total budget.

    eval_index is 1-based and strictly increasing; best is nondecreasing.
    Points may be sparse; densify() extends them to a step function.
    """

    points: tuple
    budget: int

    def __post_init__(self):
        pts = tuple((int(e), float(v)) for e, v in self.points)
        object.__setattr__(self, "points", pts)
        for (e0, v0), (e1, v1) in zip(pts, pts[1:]):
            if e1 <= e0:
                raise ValueError("eval_index must be strictly increasing")
            if v1 < v0:
                raise ValueError("best_so_far must be nondecreasing")
        if pts and (pts[0][0] < 1 or pts[-1][0] > self.budget):
            raise ValueError("eval_index out of 1..budget")

    @property
    def final(self) -> float:
        if not self.points:
            raise EmptyCurve("curve has no points")
        return self.points[-1][1]


@dataclass(frozen=True)
class ComparisonSummary:
    task: str
    endpoint_a: float
    endpoint_g: float
    delta: float
    speedup: float | None
    speedup_reason: str | None
    lead_fraction: float


def densify(curve: FitnessCurve) -> np.ndarray:
    """Piecewise-constant extension over e = 1..budget.

    Entry e-1 holds the best value at the largest recorded eval_index <= e;
    indices before the first recorded point are NaN (undefined).
    """
    if not curve.points:
        raise EmptyCurve("curve has no points")
    out = np.full(curve.budget, np.nan)
    idx = np.array([e for e, _ in curve.points])
    vals = np.array([v for _, v in curve.points])
    e_axis = np.arange(1, curve.budget + 1)
    pos = np.searchsorted(idx, e_axis, side="right") - 1
    defined = pos >= 0
    out[defined] = vals[pos[defined]]
    return out


def value_at(curve: FitnessCurve, e: int) -> float | None:
    """Step-function query; None before the first recorded point."""
    if not curve.points:
        raise EmptyCurve("curve has no points")
    if e < 1 or e > curve.budget:
        return None
    v = densify(curve)[e - 1]
    return None if np.isnan(v) else float(v)


def speedup(curve_a: FitnessCurve, curve_g: FitnessCurve) -> tuple[float | None, str | None]:
    """Ratio of first-crossing eval indices against the baseline endpoint.

    S = min{e : f_G(e) >= f_G(B)} / min{e : f_A(e) >= f_G(B)}. Comparisons
    are exact. Returns (None, reason) when the agent never reaches the
    baseline endpoint.
    """
    if curve_a.budget != curve_g.budget:
        raise ValueError("curves must share the same budget")
    target = curve_g.final
    f_a = densify(curve_a)
    f_g = densify(curve_g)
    with np.errstate(invalid="ignore"):
        g_hits = np.nonzero(f_g >= target)[0]
        a_hits = np.nonzero(f_a >= target)[0]
    if a_hits.size == 0:
        return None, "target not reached"
    return float(g_hits[0] + 1) / float(a_hits[0] + 1), None


def lead_fraction(curve_a: FitnessCurve, curve_g: FitnessCurve) -> float:
    """Fraction of e in 1..B where the agent is strictly ahead.

    Indices where either side is undefined count as not-ahead.
    """
    if curve_a.budget != curve_g.budget:
        raise ValueError("curves must share the same budget")
    f_a = densify(curve_a)
    f_g = densify(curve_g)
    with np.errstate(invalid="ignore"):
        ahead = f_a > f_g
    ahead &= ~np.isnan(f_a) & ~np.isnan(f_g)
    return float(np.count_nonzero(ahead)) / curve_a.budget


def compare(task: str, curve_a: FitnessCurve, curve_g: FitnessCurve) -> ComparisonSummary:
    s, reason = speedup(curve_a, curve_g)
    return ComparisonSummary(
        task=task,
        endpoint_a=curve_a.final,
        endpoint_g=curve_g.final,
        delta=curve_a.final - curve_g.final,
        speedup=s,
        speedup_reason=reason,
        lead_fraction=lead_fraction(curve_a, curve_g),
    )


def summary_csv(summaries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "ga", "ar", "delta", "speedup", "lead_fraction"])
    for s in summaries:
        w.writerow(
            [
                s.task,
                repr(s.endpoint_g),
                repr(s.endpoint_a),
                repr(s.delta),
                "" if s.speedup is None else repr(s.speedup),
                repr(s.lead_fraction),
            ]
        )
    return buf.getvalue()


def summary_table(summaries) -> str:
    """Fixed-width text table: Task | GA | AR | Delta | S | L."""
    header = ("Task", "GA", "AR", "Delta", "S", "L")
    rows = [header]
    for s in summaries:
        rows.append(
            (
                s.task,
                f"{s.endpoint_g:.2f}",
                f"{s.endpoint_a:.2f}",
                f"{s.delta:+.2f}",
                "n/r" if s.speedup is None else f"{s.speedup:.2f}",
                f"{s.lead_fraction:.2f}",
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def curve_csv(curve: FitnessCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eval_index", "best_fitness"])
    for e, v in curve.points:
        w.writerow([e, repr(v)])
    return buf.getvalue()


def curve_from_csv(text: str) -> FitnessCurve:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["eval_index", "best_fitness"]:
        raise ValueError("expected header eval_index,best_fitness")
    pts = [(int(e), float(v)) for e, v in rows[1:]]
    budget = pts[-1][0] if pts else 0
    return FitnessCurve(points=tuple(pts), budget=budget)


def curve_from_fitness_sequence(values, budget: int | None = None) -> FitnessCurve:
    """Build a dense best-so-far curve from raw per-eval fitness values."""
    pts = []
    best = None
    for i, v in enumerate(values, start=1):
        best = v if best is None else max(best, v)
        pts.append((i, best))
    return FitnessCurve(points=tuple(pts), budget=budget or len(pts))


def render_report(summaries, curves: dict | None = None) -> dict:
    """Emit the comparison artifacts: summary CSV + text table + curve CSVs."""
    out = {
        "summary.csv": summary_csv(summaries),
        "summary.txt": summary_table(summaries),
    }
    for name, curve in (curves or {}).items():
        out[f"curve_{name}.csv"] = curve_csv(curve)
    return out
