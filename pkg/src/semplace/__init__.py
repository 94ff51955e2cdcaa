"""Placement of semantic operators in hybrid relational/LLM query plans.

Typical use::

    from semplace import parse, optimize, execute, MockOracle

    tree = parse(sql, catalog)
    plan = optimize(tree, "costmodel", data=data).tree
    result, metrics = execute(plan, data, MockOracle(seed=1))
"""

from __future__ import annotations

__version__ = "0.1.0"

from .cost import CostEstimate, OptimizerConfig, SelectivityModel, Stats, exact_stats, stats_from_data
from .dp import Placement, PlacementError, apply_placement, brute_force_place, dp_place, optimize_costmodel
from .executor import ExecutionError, ExecutionMetrics, FunctionCache, Relation, execute, run_and_compare
from .oracle import MockOracle, RecordedOracle, RemoteOracle, oracle_from_spec
from .pipeline import optimize, run_strategies, run_strategy
from .plan import ColumnRef, Kind, PlanError, PlanNode, PlanTree, SemanticPredicate, TreeBuilder, validate
from .pullup import count_distinct_inputs, legal_positions, pull_up_all
from .rewrite import decompose_semantic_joins, pull_up_semantic_projections, simplify_to_fixed_point
from .sql import BindError, ParseError, SqlError, parse, render_sql

__all__ = [
    "BindError",
    "ColumnRef",
    "CostEstimate",
    "ExecutionError",
    "ExecutionMetrics",
    "FunctionCache",
    "Kind",
    "MockOracle",
    "OptimizerConfig",
    "ParseError",
    "PlanError",
    "PlanNode",
    "PlanTree",
    "Placement",
    "PlacementError",
    "RecordedOracle",
    "Relation",
    "RemoteOracle",
    "SelectivityModel",
    "SemanticPredicate",
    "SqlError",
    "Stats",
    "TreeBuilder",
    "apply_placement",
    "brute_force_place",
    "count_distinct_inputs",
    "decompose_semantic_joins",
    "dp_place",
    "exact_stats",
    "execute",
    "legal_positions",
    "optimize",
    "optimize_costmodel",
    "oracle_from_spec",
    "parse",
    "pull_up_all",
    "pull_up_semantic_projections",
    "render_sql",
    "run_and_compare",
    "run_strategies",
    "run_strategy",
    "simplify_to_fixed_point",
    "stats_from_data",
    "validate",
]
