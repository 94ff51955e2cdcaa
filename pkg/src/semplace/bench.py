"""Desk-scale experiments: strategy comparison, alpha and selectivity sweeps, overhead.

Every experiment returns a :class:`BenchReport`, a flat table of rows plus a
summary dict, written out as ``<name>.csv`` and ``<name>.json``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from .cost import OptimizerConfig, SelectivityModel
from .dp import placement_of
from .executor import ExecutionMetrics, FunctionCache, execute
from .pipeline import STRATEGIES, Optimized, Scenario, load_scenario, optimize, run_strategies, scenario_tree
from .plan import Kind, PlanTree
from .pullup import legal_positions
from .workloads import PRESETS


@dataclass
class BenchReport:
    name: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "rows": self.rows, "summary": self.summary}

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.name}.csv"
        with csv_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=self.columns)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _cell(v) for k, v in r.items()})
        json_path = out / f"{self.name}.json"
        json_path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return csv_path, json_path


def _cell(v: Any) -> Any:
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True)
    return v


def geometric_mean(values: Iterable[float]) -> float:
    vals = list(values)
    if not vals:
        return math.nan
    if any(v <= 0 for v in vals):
        raise ValueError("geometric mean needs positive values")
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


# ---------------------------------------------------------------------------
# plan identity and measured cost


def plan_label(tree: PlanTree, original: PlanTree | None = None) -> str:
    """Readable plan identity: each filter's height above its lowest legal slot, plus stack order.

    ``original`` is the plan whose legal paths define the heights (defaults to
    ``tree`` itself, which gives the same paths because moves stay on them).
    """
    ref = original if original is not None else tree
    parts = []
    pl = placement_of(tree)
    for f in sorted(pl.assignments):
        path = legal_positions(ref, f) if f in ref else [pl.assignments[f]]
        lowest = path[0]
        # the lowest slot does not change under placement moves
        height = path.index(pl.assignments[f]) if pl.assignments[f] in path else -1
        parts.append(f"sf{f}@{height}" if lowest is not None else f"sf{f}")
    stacks = ";".join(f"{u}:" + ">".join(map(str, s)) for u, s in sorted(pl.stacks.items()) if len(s) > 1)
    return ",".join(parts) + (f" [{stacks}]" if stacks else "")


def measured_relational_rows(tree: PlanTree, metrics: ExecutionMetrics) -> int:
    """Rows produced by relational operators plus cache probes, as executed."""
    rel = sum(rows for nid, rows in metrics.rows_per_node.items()
              if nid in tree and tree[nid].kind not in (Kind.SEM_FILTER, Kind.SEM_PROJECT))
    return rel + metrics.cache_probes


def _estimate_fields(opt: Optimized) -> dict[str, Any]:
    est = opt.placement.estimated if opt.placement is not None else None
    if est is None:
        return {"est_llm": None, "est_rel": None, "est_total": None}
    return {"est_llm": est.llm_rows, "est_rel": est.rel_rows, "est_total": est.total}


# ---------------------------------------------------------------------------
# strategy comparison


def compare_strategies(sc: Scenario, queries: dict[str, str] | None = None,
                       strategies: Iterable[str] = STRATEGIES, baseline: str = "none",
                       name: str | None = None, workers: int = 1) -> BenchReport:
    """Run every strategy on every query; summarise against ``baseline``."""
    strategies = list(strategies)
    if baseline not in strategies:
        strategies.insert(0, baseline)
    else:
        strategies.remove(baseline)
        strategies.insert(0, baseline)
    queries = queries or {sc.name: sc.query}
    report = BenchReport(name or sc.name)
    alpha = sc.config.alpha
    for qname, sql in queries.items():
        tree = scenario_tree(sc, sql)
        runs, comparisons = run_strategies(tree, strategies, sc.data, sc.oracle, model=sc.model,
                                           config=sc.config, stats_mode=sc.stats_mode, workers=workers)
        for run, cmp in zip(runs, comparisons):
            rel = measured_relational_rows(run.optimized.tree, run.metrics)
            report.rows.append({
                "query": qname,
                "strategy": run.strategy,
                "plan": plan_label(run.optimized.tree, tree),
                "llm_calls": run.metrics.llm_calls,
                "rel_rows": rel,
                "actual_cost": run.metrics.llm_calls + alpha * rel,
                **_estimate_fields(run.optimized),
                "f1": cmp["f1"],
                "wall_time": run.metrics.wall_time + run.optimizer_time,
                "optimize_time": run.optimizer_time,
            })
    report.summary = summarize_strategies(report.rows, baseline)
    report.summary["alpha"] = alpha
    return report


def summarize_strategies(rows: list[dict[str, Any]], baseline: str) -> dict[str, Any]:
    """Geometric-mean speedup and cost reduction per strategy against ``baseline``.

    Ratios are baseline / strategy per query; queries where either side is zero
    are skipped for that ratio.
    """
    by_query: dict[str, dict[str, dict]] = {}
    for r in rows:
        by_query.setdefault(r["query"], {})[r["strategy"]] = r
    strategies = []
    for r in rows:
        if r["strategy"] not in strategies:
            strategies.append(r["strategy"])
    out: dict[str, Any] = {"baseline": baseline, "queries": len(by_query), "strategies": {}}
    for s in strategies:
        speed, cost, f1 = [], [], []
        for q in by_query.values():
            if s not in q or baseline not in q:
                continue
            b, x = q[baseline], q[s]
            if b["wall_time"] > 0 and x["wall_time"] > 0:
                speed.append(b["wall_time"] / x["wall_time"])
            if b["actual_cost"] > 0 and x["actual_cost"] > 0:
                cost.append(b["actual_cost"] / x["actual_cost"])
            f1.append(x["f1"])
        out["strategies"][s] = {
            "geomean_speedup": geometric_mean(speed) if speed else None,
            "geomean_cost_reduction": geometric_mean(cost) if cost else None,
            "mean_f1": sum(f1) / len(f1) if f1 else None,
        }
    return out


# ---------------------------------------------------------------------------
# sweeps


def _run_cell(tree: PlanTree, sc: Scenario, model: SelectivityModel, config: OptimizerConfig,
              stats=None, workers: int = 1) -> tuple[Optimized, ExecutionMetrics]:
    opt = optimize(tree, "costmodel", model=model, config=config, data=sc.data, oracle=sc.oracle,
                   stats_mode=sc.stats_mode, stats=stats)
    _, metrics = execute(opt.tree, sc.data, sc.oracle, FunctionCache(), workers=workers)
    return opt, metrics


def _regimes(values: list[float], labels: list[str]) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    for v, lab in zip(values, labels):
        if out and out[-1]["plan"] == lab:
            out[-1]["to"] = v
        else:
            out.append({"plan": lab, "from": v, "to": v})
    return out


def sweep_alpha(sc: Scenario, grid: Iterable[float], sql: str | None = None, workers: int = 1) -> BenchReport:
    """Cost-model plan, estimates and executed calls for each alpha in ``grid``."""
    grid = sorted(float(a) for a in grid)
    if not grid or any(a <= 0 for a in grid):
        raise ValueError("alpha grid must be non-empty and positive")
    tree = scenario_tree(sc, sql)
    report = BenchReport(f"{sc.name}-alpha")
    stats = None
    for a in grid:
        opt, m = _run_cell(tree, sc, sc.model, replace(sc.config, alpha=a), stats, workers)
        stats = opt.stats  # statistics do not depend on alpha
        report.rows.append({
            "alpha": a,
            "plan": plan_label(opt.tree, tree),
            **_estimate_fields(opt),
            "llm_calls": m.llm_calls,
            "wall_time": m.wall_time,
        })
    labels = [r["plan"] for r in report.rows]
    calls = [r["llm_calls"] for r in report.rows]
    report.summary = {
        "regimes": _regimes(grid, labels),
        "distinct_plans": len(set(labels)),
        "llm_calls_non_decreasing": all(x <= y for x, y in zip(calls, calls[1:])),
        "est_llm_non_decreasing": all(x["est_llm"] <= y["est_llm"] for x, y in zip(report.rows, report.rows[1:])),
        "est_rel_non_increasing": all(x["est_rel"] >= y["est_rel"] for x, y in zip(report.rows, report.rows[1:])),
    }
    return report


def sweep_selectivity(sc: Scenario, sf_grid: Iterable[float], join_grid: Iterable[float],
                      sql: str | None = None, workers: int = 1) -> BenchReport:
    """Chosen plan and executed cost per (filter selectivity, join selectivity) cell."""
    sf_grid, join_grid = list(map(float, sf_grid)), list(map(float, join_grid))
    for v in sf_grid + join_grid:
        if not 0.0 < v <= 1.0:
            raise ValueError(f"grid value {v} outside (0, 1]")
    tree = scenario_tree(sc, sql)
    report = BenchReport(f"{sc.name}-selectivity")
    stats = None
    for s in sf_grid:
        for j in join_grid:
            model = replace(sc.model, default_sf_selectivity=s, join_distinct_selectivity=j)
            opt, m = _run_cell(tree, sc, model, sc.config, stats, workers)
            stats = opt.stats
            report.rows.append({
                "sf_selectivity": s,
                "join_selectivity": j,
                "plan": plan_label(opt.tree, tree),
                **_estimate_fields(opt),
                "llm_calls": m.llm_calls,
                "actual_cost": m.llm_calls + sc.config.alpha * measured_relational_rows(opt.tree, m),
                "wall_time": m.wall_time,
            })
    plans = sorted({r["plan"] for r in report.rows})
    calls_by_plan: dict[str, set[int]] = {}
    for r in report.rows:
        calls_by_plan.setdefault(r["plan"], set()).add(r["llm_calls"])
    boundaries = []
    for s in sf_grid:
        row = [r for r in report.rows if r["sf_selectivity"] == s]
        for a, b in zip(row, row[1:]):
            if a["plan"] != b["plan"]:
                boundaries.append({"sf_selectivity": s, "between": [a["join_selectivity"], b["join_selectivity"]]})
    report.summary = {
        "distinct_plans": len(plans),
        "plans": plans,
        "join_boundaries": boundaries,
        "plan_determines_calls": all(len(v) == 1 for v in calls_by_plan.values()),
    }
    return report


# ---------------------------------------------------------------------------
# optimizer overhead


def measure_optimizer_overhead(sc: Scenario, queries: dict[str, str], repeats: int = 1) -> BenchReport:
    """Simplification and placement time against end-to-end time, per query."""
    report = BenchReport(f"{sc.name}-overhead")
    for name, sql in queries.items():
        tree = scenario_tree(sc, sql)
        n = len(tree.nodes_of(Kind.SEM_FILTER))
        best: dict[str, Any] | None = None
        for _ in range(max(1, repeats)):
            t0 = time.perf_counter()
            opt = optimize(tree, "costmodel", model=sc.model, config=sc.config, data=sc.data,
                           oracle=sc.oracle, stats_mode=sc.stats_mode)
            optimize_time = time.perf_counter() - t0
            _, m = execute(opt.tree, sc.data, sc.oracle, FunctionCache())
            end_to_end = optimize_time + m.wall_time
            row = {
                "query": name,
                "n": n,
                "nodes": len(tree),
                "llm_calls": m.llm_calls,
                "simplify_time": opt.timing.get("simplify", 0.0),
                "statistics_time": opt.timing.get("statistics", 0.0),
                "placement_time": opt.timing.get("placement", 0.0),
                "optimize_time": optimize_time,
                "execute_time": m.wall_time,
                "share": optimize_time / end_to_end if end_to_end > 0 else 0.0,
            }
            if best is None or row["optimize_time"] < best["optimize_time"]:
                best = row
        report.rows.append(best)
    total_opt = sum(r["optimize_time"] for r in report.rows)
    total = sum(r["optimize_time"] + r["execute_time"] for r in report.rows)
    report.summary = {
        "max_placement_time": max((r["placement_time"] for r in report.rows), default=0.0),
        "max_share": max((r["share"] for r in report.rows), default=0.0),
        "overall_share": total_opt / total if total > 0 else 0.0,
    }
    return report


# ---------------------------------------------------------------------------
# presets


TIMING_COLUMNS = ("wall_time", "optimize_time", "placement_time", "simplify_time", "statistics_time",
                  "execute_time", "share")


def strip_timing(report: BenchReport) -> BenchReport:
    """Drop wall-clock columns and summaries, which are not comparable under parallel runs."""
    rows = [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in report.rows]
    summary = dict(report.summary)
    for s in summary.get("strategies", {}).values():
        s.pop("geomean_speedup", None)
    return BenchReport(report.name, rows, summary)


def run_preset(name: str, out_dir: str | Path | None = None, *, latency_ms: float | None = None,
               parallel: int = 1) -> list[BenchReport]:
    """Run the experiment a preset is built for; optionally write its reports.

    ``parallel > 1`` evaluates semantic calls on that many threads and leaves
    timing columns out of the reports.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if parallel < 1:
        raise ValueError("parallel must be at least 1")
    if parallel > 1 and name == "overhead":
        raise ValueError("the overhead preset measures time and cannot run in parallel mode")
    sc = load_scenario(name)
    if latency_ms is not None:
        sc.oracle = replace(sc.oracle, latency=latency_ms / 1000.0)
    opts = sc.options
    if name == "alpha-sweep":
        reports = [sweep_alpha(sc, opts["grid"], workers=parallel)]
    elif name == "sel-grid":
        reports = [sweep_selectivity(sc, opts["sf_grid"], opts["join_grid"], workers=parallel)]
    elif name == "overhead":
        reports = [measure_optimizer_overhead(sc, opts["queries"], int(opts.get("repeats", 1)))]
    else:
        reports = [compare_strategies(sc, workers=parallel)]
    if parallel > 1:
        reports = [strip_timing(r) for r in reports]
    if out_dir is not None:
        for r in reports:
            r.write(out_dir)
    return reports


__all__ = [
    "BenchReport",
    "compare_strategies",
    "geometric_mean",
    "measure_optimizer_overhead",
    "measured_relational_rows",
    "plan_label",
    "run_preset",
    "strip_timing",
    "summarize_strategies",
    "sweep_alpha",
    "sweep_selectivity",
]
