"""End-to-end query pipeline shared by the command line and the bench harness.

``optimize`` runs parse output through simplification and one placement
strategy; ``run_strategies`` executes several strategies on the same data and
oracle and compares their results against the first.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cost import OptimizerConfig, SelectivityModel, Stats, exact_stats, stats_from_data
from .dp import MAX_FILTERS, DPResult, Placement, apply_placement, dp_place, optimize_costmodel, placement_of
from .executor import ExecutionMetrics, FunctionCache, Relation, execute, multiset_f1, normalized_multiset
from .oracle import MockOracle, SemanticOracle
from .plan import Kind, PlanTree
from .pullup import PullUpResult, pull_up_all
from .rewrite import SimplifyResult, simplify_to_fixed_point
from .sql import parse
from .workloads import WorkloadSpec, generate_data, load_preset

STRATEGIES = ("none", "pullup", "costmodel")
STATS_MODES = ("estimate", "exact")


@dataclass
class Optimized:
    tree: PlanTree
    strategy: str
    simplify: SimplifyResult | None = None
    pullup: PullUpResult | None = None
    placement: Placement | None = None
    stats: Stats | None = None
    dp: DPResult | None = None
    timing: dict[str, float] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        out: dict[str, Any] = {"strategy": self.strategy}
        if self.simplify is not None:
            out["simplify"] = {"iterations": self.simplify.iterations,
                               "trace": [s.to_dict() for s in self.simplify.trace]}
        if self.pullup is not None:
            out["pullup"] = {"iterations": self.pullup.iterations,
                             "trace": [list(x) for x in self.pullup.trace]}
        placement = self.placement if self.placement is not None else placement_of(self.tree)
        out["placement"] = placement.to_dict()
        return out

    def dp_states(self) -> list[dict[str, Any]]:
        """Every finite DP state with its value and choice, for tracing."""
        if self.dp is None:
            return []
        ctx, table = self.dp.context, self.dp.table
        rows = []
        for (u, S), v in sorted(table.value.items()):
            how = table.choice[(u, S)]
            choice: dict[str, Any] = {"step": how[0]}
            if how[0] == "place":
                choice["filter"] = ctx.fid[how[1]]
            elif how[0] == "binary":
                choice["left"] = [ctx.fid[i] for i in range(ctx.n) if how[1] >> i & 1]
            rows.append({"node": u, "subset": [ctx.fid[i] for i in range(ctx.n) if S >> i & 1],
                         "value": float(v), "choice": choice})
        return rows


def resolve_stats(tree: PlanTree, mode: str, data: dict[str, Relation] | None,
                  oracle: SemanticOracle | None = None, given: Stats | None = None) -> Stats:
    """Statistics for the cost model: supplied, measured exactly, or from base tables."""
    if mode not in STATS_MODES:
        raise ValueError(f"unknown stats mode {mode!r}")
    if given is not None:
        return given
    if data is None:
        return Stats()
    if mode == "exact":
        return exact_stats(tree, data, oracle)
    return stats_from_data(data)


def optimize(tree: PlanTree, strategy: str, *, model: SelectivityModel | None = None,
             config: OptimizerConfig | None = None, stats: Stats | None = None,
             data: dict[str, Relation] | None = None, oracle: SemanticOracle | None = None,
             stats_mode: str = "estimate", stage: str | None = None) -> Optimized:
    """Apply ``strategy`` to a bound plan.

    ``none`` leaves the plan as parsed. The other strategies simplify first;
    ``stage="simplify"`` stops right after that.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    if strategy == "none":
        return Optimized(tree.copy(), strategy, timing={"simplify": 0.0, "placement": 0.0})
    t0 = time.perf_counter()
    simp = simplify_to_fixed_point(tree)
    timing = {"simplify": time.perf_counter() - t0}
    out = Optimized(simp.tree, strategy, simplify=simp, timing=timing)
    if stage == "simplify":
        timing["placement"] = 0.0
        return out
    if strategy == "pullup":
        t1 = time.perf_counter()
        out.pullup = pull_up_all(simp.tree)
        timing["placement"] = time.perf_counter() - t1
        out.tree = out.pullup.tree
        return out
    t1 = time.perf_counter()
    out.stats = resolve_stats(simp.tree, stats_mode, data, oracle, stats)
    timing["statistics"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    n = semantic_filter_count(simp.tree)
    if n > MAX_FILTERS:
        out.tree, out.placement = optimize_costmodel(simp.tree, model, config, out.stats)
    elif n == 0:
        out.placement = Placement({}, {})
    else:
        out.dp = dp_place(simp.tree, model, config, out.stats)
        out.placement = out.dp.placement
        out.tree = apply_placement(simp.tree, out.placement)
    timing["placement"] = time.perf_counter() - t2
    return out


# ---------------------------------------------------------------------------
# scenarios: a dataset, a query, an oracle and cost settings


@dataclass
class Scenario:
    name: str
    catalog: dict
    data: dict[str, Relation]
    query: str | None
    oracle: MockOracle
    model: SelectivityModel
    config: OptimizerConfig
    stats_mode: str = "estimate"
    options: dict = field(default_factory=dict)


def mock_from_options(opts: dict, latency: float | None = None) -> MockOracle:
    return MockOracle(
        seed=int(opts.get("seed", 0)),
        selectivity=float(opts.get("selectivity", 0.2)),
        selectivities={k: float(v) for k, v in opts.get("selectivities", {}).items()},
        latency=float(opts.get("latency_ms", 0.0)) / 1000.0 if latency is None else latency,
    )


def cost_from_options(opts: dict) -> tuple[SelectivityModel, OptimizerConfig]:
    from .cost import load_cost_config

    return load_cost_config(None, **opts)


def load_scenario(preset_or_path: str | Path | dict) -> Scenario:
    """A preset name, a workload JSON path, or an already loaded dict."""
    if isinstance(preset_or_path, dict):
        raw = preset_or_path
    elif Path(preset_or_path).suffix == ".json" or Path(preset_or_path).exists():
        import json

        raw = json.loads(Path(preset_or_path).read_text(encoding="utf-8"))
    else:
        raw = load_preset(str(preset_or_path))
    spec = WorkloadSpec.from_dict(raw)
    catalog, data = generate_data(spec)
    model, config = cost_from_options(spec.options.get("cost", {}))
    return Scenario(spec.name, catalog, data, spec.query, mock_from_options(spec.oracle), model, config,
                    spec.options.get("stats", "estimate"), spec.options)


# ---------------------------------------------------------------------------
# execution and comparison


@dataclass
class StrategyRun:
    strategy: str
    optimized: Optimized
    result: Relation
    metrics: ExecutionMetrics

    @property
    def optimizer_time(self) -> float:
        return sum(self.optimized.timing.values())

    def to_dict(self) -> dict[str, Any]:
        m = self.metrics
        placement = self.optimized.placement or placement_of(self.optimized.tree)
        return {
            "strategy": self.strategy,
            "llm_calls": m.llm_calls,
            "cache_hits": m.cache_hits,
            "rows": len(self.result.rows),
            "placement": placement.to_dict(),
            "timing": {"optimize": self.optimizer_time, "execute": m.wall_time,
                       **{f"optimize_{k}": v for k, v in self.optimized.timing.items()}},
        }


def run_strategy(tree: PlanTree, strategy: str, data: dict[str, Relation], oracle: SemanticOracle, *,
                 model: SelectivityModel | None = None, config: OptimizerConfig | None = None,
                 stats_mode: str = "estimate", stats: Stats | None = None, workers: int = 1) -> StrategyRun:
    opt = optimize(tree, strategy, model=model, config=config, stats=stats, data=data,
                   oracle=oracle, stats_mode=stats_mode)
    result, metrics = execute(opt.tree, data, oracle, FunctionCache(), workers=workers)
    return StrategyRun(strategy, opt, result, metrics)


def run_strategies(tree: PlanTree, strategies: list[str], data: dict[str, Relation], oracle: SemanticOracle,
                   **kwargs) -> tuple[list[StrategyRun], list[dict[str, Any]]]:
    """Run every strategy and compare each result with the first strategy's."""
    if len(strategies) < 2:
        raise ValueError("comparison needs at least two strategies")
    runs = [run_strategy(tree, s, data, oracle, **kwargs) for s in strategies]
    ref = runs[0].result
    ref_ms = normalized_multiset(ref)
    comparisons = []
    for r in runs:
        equal = normalized_multiset(r.result) == ref_ms
        p, rc, f1 = (1.0, 1.0, 1.0) if equal else multiset_f1(ref, r.result)
        comparisons.append({"strategy": r.strategy, "against": runs[0].strategy, "equal": equal,
                            "precision": p, "recall": rc, "f1": f1})
    return runs, comparisons


def scenario_tree(sc: Scenario, sql: str | None = None) -> PlanTree:
    q = sql if sql is not None else sc.query
    if q is None:
        raise ValueError(f"scenario {sc.name} has no query")
    return parse(q, sc.catalog)


def semantic_filter_count(tree: PlanTree) -> int:
    return len(tree.nodes_of(Kind.SEM_FILTER))


__all__ = [
    "STRATEGIES",
    "Optimized",
    "Scenario",
    "StrategyRun",
    "load_scenario",
    "mock_from_options",
    "optimize",
    "resolve_stats",
    "run_strategies",
    "run_strategy",
    "scenario_tree",
]
