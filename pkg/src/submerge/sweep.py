"""Sweep a merge-strategy/position grid and summarize it as a frontier.

One sweep = the no-merge baseline plus every (strategy, position) cell, each
over all seeds, on a shared dataset/vocab. Artifacts written to the output
directory:

  results.csv   one row per run: strategy,position,seed,metric,flops
  points.csv    per-cell seed means: label,cost,performance
  report.json   rows, aggregates, frontier (with knee distances), knee

A diverged run becomes a recorded failure row (metric NaN) instead of
aborting the sweep; cells whose every seed failed are left off the frontier.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pareto import ConfigPoint, build_frontier, knee_distances
from .training import TrainingDiverged, RunResult, prepare_task, train


def _cell_label(strategy, position):
    return "none" if strategy is None else f"{strategy}@{position}"


@dataclass
class SweepReport:
    """In-memory mirror of report.json plus the per-run results."""

    rows: list
    aggregates: list
    frontier: list
    knee: dict

    def to_dict(self):
        return {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "frontier": self.frontier,
            "knee": self.knee,
        }


def run_sweep(exp, out_dir):
    """Train the whole grid and write results.csv/points.csv/report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = prepare_task(exp)

    cells = [(None, 0)] + [
        (s, p) for s in exp.strategies for p in exp.positions
    ]
    results = []
    for strategy, position in cells:
        for seed in exp.seeds:
            try:
                res = train(exp, strategy, position, seed, data=data)
            except TrainingDiverged as exc:
                res = RunResult(
                    strategy=strategy,
                    position=position if strategy is not None else None,
                    seed=seed,
                    metric=float("nan"),
                    flops=0,
                    curve=[],
                    status="failed",
                    error=str(exc),
                )
            results.append(res)

    rows = []
    for res in results:
        row = res.row()
        row["status"] = res.status
        if res.error:
            row["error"] = res.error
        rows.append(row)

    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh,
            fieldnames=["strategy", "position", "seed", "metric", "flops"],
            extrasaction="ignore",
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

    aggregates = []
    points = []
    for strategy, position in cells:
        ok = [
            r
            for r in results
            if r.strategy == strategy
            and (strategy is None or r.position == position)
            and r.status == "ok"
        ]
        label = _cell_label(strategy, position)
        agg = {
            "label": label,
            "strategy": strategy or "none",
            "position": None if strategy is None else position,
            "seeds_ok": len(ok),
            "seeds_failed": len(exp.seeds) - len(ok),
        }
        if ok:
            agg["metric_mean"] = float(np.mean([r.metric for r in ok]))
            agg["flops_mean"] = float(np.mean([r.flops for r in ok]))
            points.append(
                ConfigPoint(label, agg["flops_mean"], agg["metric_mean"])
            )
        aggregates.append(agg)

    if not points:
        raise TrainingDiverged("every run in the sweep failed")
    frontier = build_frontier(points)
    dists = knee_distances(list(frontier.points))
    frontier_rows = [
        {
            "label": p.label,
            "cost": p.cost,
            "performance": p.performance,
            "knee_distance": d,
        }
        for p, d in zip(frontier.points, dists)
    ]
    knee_row = next(r for r in frontier_rows if r["label"] == frontier.knee.label)

    with open(out_dir / "points.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "cost", "performance"])
        for p in points:
            writer.writerow([p.label, p.cost, p.performance])

    report = SweepReport(rows, aggregates, frontier_rows, knee_row)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return report
