"""Efficiency frontier and knee-point selection over (cost, performance) points.

A point dominates another when it is at least as good on both axes and
strictly better on one. The frontier sweep sorts by cost ascending
(performance descending on ties) and keeps strict performance improvements;
the knee is the frontier point farthest from the segment joining the frontier
endpoints, a scale-free elbow heuristic.
"""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ConfigPoint:
    """A labelled configuration: cost to run it, performance it achieves."""

    label: str
    cost: float
    performance: float

    def __post_init__(self):
        cost = float(self.cost)
        perf = float(self.performance)
        if not (math.isfinite(cost) and cost > 0):
            raise ValueError(f"cost must be finite and positive, got {cost}")
        if not math.isfinite(perf):
            raise ValueError(f"performance must be finite, got {perf}")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "performance", perf)


def dominates(a, b):
    """True when a is no worse than b on both axes and strictly better on one."""
    return (a.performance >= b.performance and a.cost < b.cost) or (
        a.performance > b.performance and a.cost <= b.cost
    )


def efficiency_frontier(points):
    """Non-dominated points, sorted by cost ascending.

    Exact duplicates collapse to one representative (the first by sort
    order: lowest cost, then highest performance, then input order).
    """
    ordered = sorted(points, key=lambda p: (p.cost, -p.performance))
    best = -math.inf
    out = []
    for p in ordered:
        if p.performance > best:
            out.append(p)
            best = p.performance
    return out


def knee_distances(frontier):
    """Distance of each point to the line through the frontier endpoints.

    Endpoints are the min-cost and max-performance points; when they
    coincide every distance is 0. Distances below double-precision rounding
    noise are reported as exactly 0, so collinear-looking frontiers tie
    instead of being ranked by rounding crumbs.
    """
    if not frontier:
        raise ValueError("knee needs a non-empty frontier")
    lo = min(frontier, key=lambda p: (p.cost, -p.performance))
    hi = max(frontier, key=lambda p: (p.performance, -p.cost))
    dp = hi.performance - lo.performance
    dc = hi.cost - lo.cost
    norm = math.hypot(dp, dc)
    if norm == 0.0:
        return [0.0] * len(frontier)
    # work in coordinates local to lo so both endpoints land on exactly 0,
    # keeping the argmax tie-break honest on degenerate frontiers
    eps = math.ulp(1.0)
    out = []
    for p in frontier:
        a = dp * (p.cost - lo.cost)
        b = dc * (p.performance - lo.performance)
        num = abs(a - b)
        if num <= 8.0 * eps * (abs(a) + abs(b)):
            num = 0.0
        out.append(num / norm)
    return out


def knee_point(frontier):
    """The frontier point with the largest endpoint-line distance.

    Ties (including the degenerate one- or two-point frontier, where every
    distance is 0) resolve to the highest-performance point.
    """
    dists = knee_distances(frontier)
    best = max(
        range(len(frontier)),
        key=lambda i: (dists[i], frontier[i].performance),
    )
    return frontier[best]


@dataclass(frozen=True)
class Frontier:
    """A computed frontier with its knee point."""

    points: tuple
    knee: ConfigPoint


def build_frontier(points):
    """Frontier + knee in one step; points must be non-empty."""
    front = efficiency_frontier(points)
    if not front:
        raise ValueError("cannot build a frontier from zero points")
    return Frontier(tuple(front), knee_point(front))
