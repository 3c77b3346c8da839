"""
Per-Strahler-order morphometry and hemodynamics of a vessel tree, written as
plain CSV tables (one table per figure panel).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tree import MMHG, HemoConfig, VesselTree, compute_pressures, strahler_orders


@dataclass
class OrderStats:
    order: int
    count: int
    radius_mean: float
    radius_std: float
    length_mean: float
    length_std: float
    area_mm2: float
    flow_mean: float


@dataclass
class MorphometryReport:
    per_order: list[OrderStats] = field(default_factory=list)
    aa_parent_hist: dict[int, int] = field(default_factory=dict)
    fit: tuple[float, float, float] | None = None

    def counts(self) -> dict[int, int]:
        return {s.order: s.count for s in self.per_order}


@dataclass
class HemodynamicsReport:
    flow_mean: dict[int, float] = field(default_factory=dict)
    pressure_min_mmhg: float = math.nan
    pressure_max_mmhg: float = math.nan
    aa_pressure_mean_mmhg: float = math.nan
    aa_pressure_std_mmhg: float = math.nan
    # bin lower edge (mmHg) -> count
    aa_pressure_hist: dict[float, int] = field(default_factory=dict)
    aa_pressures_mmhg: list[float] = field(default_factory=list)


def _std(x: np.ndarray) -> float:
    return float(np.std(x)) if len(x) else math.nan


def morphometry(tree: VesselTree, orders: dict[int, int] | None = None) -> MorphometryReport:
    """Vessel count, radius, length, cross-section and flow per Strahler order."""
    orders = strahler_orders(tree) if orders is None else orders
    eids = sorted(orders)
    report = MorphometryReport()
    if not eids:
        return report
    o = np.array([orders[e] for e in eids])
    r = np.array([tree.radius[e] for e in eids])
    length = np.array([tree.length(e) for e in eids])
    q = np.array([tree.flow[e] for e in eids])
    for k in range(int(o.max()) + 1):
        sel = o == k
        n = int(sel.sum())
        report.per_order.append(OrderStats(
            order=k, count=n,
            radius_mean=float(r[sel].mean()) if n else math.nan, radius_std=_std(r[sel]),
            length_mean=float(length[sel].mean()) if n else math.nan, length_std=_std(length[sel]),
            area_mm2=math.fsum(math.pi * ri * ri for ri in r[sel]) * 1e-6,
            flow_mean=float(q[sel].mean()) if n else math.nan,
        ))
    hist: dict[int, int] = {}
    for e in tree.leaf_edges():
        parent_node = tree.edges[e][0]
        pe = tree.in_edge.get(parent_node)
        if pe is None:
            continue
        hist[orders[pe]] = hist.get(orders[pe], 0) + 1
    report.aa_parent_hist = dict(sorted(hist.items()))
    nonzero = [(s.order, s.count) for s in report.per_order if s.count > 0]
    if len(nonzero) >= 3:
        report.fit = log_linear_fit(dict(nonzero))
    return report


def log_linear_fit(counts: dict[int, int]) -> tuple[float, float, float]:
    """Least squares of ``ln(count)`` on order; returns ``(slope, intercept, r2)``."""
    pts = [(k, c) for k, c in sorted(counts.items()) if c > 0]
    if len(pts) < 3:
        raise ValueError("log-linear fit needs at least three orders with vessels")
    x = np.array([k for k, _ in pts], dtype=float)
    y = np.log(np.array([c for _, c in pts], dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2


def hemodynamics(tree: VesselTree, config: HemoConfig, bin_width_mmhg: float = 1.0,
                 orders: dict[int, int] | None = None,
                 pressures: dict[int, float] | None = None) -> HemodynamicsReport:
    """Mean flow per order and the pressure distribution at afferent arteriole outlets."""
    orders = strahler_orders(tree) if orders is None else orders
    pressures = compute_pressures(tree, config) if pressures is None else pressures
    rep = HemodynamicsReport()
    by_order: dict[int, list[float]] = {}
    for e, k in orders.items():
        by_order.setdefault(k, []).append(tree.flow[e])
    rep.flow_mean = {k: math.fsum(v) / len(v) for k, v in sorted(by_order.items())}
    allp = np.array(list(pressures.values())) / MMHG
    rep.pressure_min_mmhg = float(allp.min())
    rep.pressure_max_mmhg = float(allp.max())
    aa = np.array([pressures[tree.edges[e][1]] for e in tree.leaf_edges()]) / MMHG
    rep.aa_pressures_mmhg = aa.tolist()
    if len(aa):
        rep.aa_pressure_mean_mmhg = float(aa.mean())
        rep.aa_pressure_std_mmhg = float(aa.std())
        bins = np.floor(aa / bin_width_mmhg).astype(np.int64)
        for b in np.unique(bins):
            rep.aa_pressure_hist[float(b * bin_width_mmhg)] = int(np.sum(bins == b))
    return rep


def branching_angles(tree: VesselTree) -> tuple[dict[int, list[float]], list[int]]:
    """
    Angle in degrees between the parent direction and each child direction at
    every internal node. Junctions with a zero-length incident edge are
    skipped and returned in the second list.
    """
    angles: dict[int, list[float]] = {}
    skipped: list[int] = []
    for n in sorted(tree.pos):
        pe = tree.in_edge.get(n)
        if pe is None or not tree.out_edges[n]:
            continue
        pdir = tree.pos[n] - tree.pos[tree.edges[pe][0]]
        pl = float(np.linalg.norm(pdir))
        dirs = [tree.pos[tree.edges[e][1]] - tree.pos[n] for e in tree.out_edges[n]]
        ls = [float(np.linalg.norm(d)) for d in dirs]
        if pl == 0 or min(ls) == 0:
            skipped.append(n)
            continue
        angles[n] = [math.degrees(math.acos(max(-1.0, min(1.0, float(pdir @ d) / (pl * l)))))
                     for d, l in zip(dirs, ls)]
    return angles, skipped


# -- CSV export --------------------------------------------------------------------

PER_ORDER_FIELDS = ["order", "count", "radius_mean", "radius_std", "length_mean", "length_std",
                    "area_mm2", "flow_mean"]


def export_report(morph: MorphometryReport, out_dir, hemo: HemodynamicsReport | None = None) -> list[Path]:
    """Write ``per_order.csv``, ``aa_parent_hist.csv``, ``aa_pressure_hist.csv`` and ``fit.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flows = hemo.flow_mean if hemo else {}
    paths = []
    p = out / "per_order.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_ORDER_FIELDS)
        for s in morph.per_order:
            fm = flows.get(s.order, s.flow_mean)
            w.writerow([s.order, s.count, repr(s.radius_mean), repr(s.radius_std), repr(s.length_mean),
                        repr(s.length_std), repr(s.area_mm2), repr(float(fm))])
    paths.append(p)
    p = out / "aa_parent_hist.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parent_order", "count"])
        for k, c in morph.aa_parent_hist.items():
            w.writerow([k, c])
    paths.append(p)
    p = out / "aa_pressure_hist.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_mmHg", "count"])
        for b, c in (hemo.aa_pressure_hist.items() if hemo else ()):
            w.writerow([repr(float(b)), c])
    paths.append(p)
    p = out / "fit.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slope", "intercept", "r2"])
        if morph.fit is not None:
            w.writerow([repr(v) for v in morph.fit])
    paths.append(p)
    return paths


def load_report(out_dir) -> tuple[MorphometryReport, dict[float, int]]:
    """Parse the CSV tables written by :func:`export_report`."""
    out = Path(out_dir)
    rep = MorphometryReport()
    with open(out / "per_order.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rep.per_order.append(OrderStats(
                int(row["order"]), int(row["count"]),
                *(float(row[k]) for k in PER_ORDER_FIELDS[2:])))
    with open(out / "aa_parent_hist.csv", newline="") as fh:
        rep.aa_parent_hist = {int(r["parent_order"]): int(r["count"]) for r in csv.DictReader(fh)}
    with open(out / "fit.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
        rep.fit = (float(rows[0]["slope"]), float(rows[0]["intercept"]), float(rows[0]["r2"])) if rows else None
    with open(out / "aa_pressure_hist.csv", newline="") as fh:
        hist = {float(r["bin_mmHg"]): int(r["count"]) for r in csv.DictReader(fh)}
    return rep, hist
