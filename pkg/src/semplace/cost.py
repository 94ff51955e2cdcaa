"""Cost model: selectivities, cardinalities, distinct counts and the weighted objective.

The objective for a placement is ``llm_rows + alpha * rel_rows`` where
``llm_rows`` estimates distinct inputs reaching each semantic filter and
``rel_rows`` estimates rows processed by relational operators, cache probes
included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .plan import (
    And,
    ColumnRef,
    Kind,
    PlanError,
    PlanTree,
    tables_under,
)
from .pullup import SemanticFilterDescriptor, describe_filters, legal_positions, skeleton

DEFAULT_ALPHA = 1e-7
DEFAULT_JOIN_SELECTIVITY = 0.1
DEFAULT_REL_SELECTIVITY = 0.3
CROSS_JOIN_SELECTIVITY = 1.0
FLOAT_TIE_TOLERANCE = 1e-12


def _check_fraction(name: str, x: float) -> None:
    if not 0.0 < x <= 1.0:
        raise ValueError(f"{name} = {x} is outside (0, 1]")


@dataclass(frozen=True)
class SelectivityModel:
    default_sf_selectivity: float = 0.2
    join_distinct_selectivity: float = DEFAULT_JOIN_SELECTIVITY
    per_filter_overrides: dict[int, float] = field(default_factory=dict)
    relational_selectivity: float = DEFAULT_REL_SELECTIVITY
    cross_join_selectivity: float = CROSS_JOIN_SELECTIVITY

    def __post_init__(self):
        _check_fraction("default_sf_selectivity", self.default_sf_selectivity)
        _check_fraction("join_distinct_selectivity", self.join_distinct_selectivity)
        _check_fraction("relational_selectivity", self.relational_selectivity)
        for k, v in self.per_filter_overrides.items():
            _check_fraction(f"selectivity of filter {k}", v)
        if self.cross_join_selectivity != 1.0:
            raise ValueError("cross join selectivity is fixed at 1")

    def sf(self, filter_id: int) -> float:
        return self.per_filter_overrides.get(filter_id, self.default_sf_selectivity)


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = DEFAULT_ALPHA
    cache_probe_cost: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.cache_probe_cost < 0:
            raise ValueError("cache_probe_cost must be non-negative")


@dataclass(frozen=True)
class CostEstimate:
    llm_rows: Any
    rel_rows: Any
    total: Any

    @classmethod
    def of(cls, llm_rows, rel_rows, alpha) -> CostEstimate:
        if llm_rows < 0 or rel_rows < 0:
            raise ValueError("cost components must be non-negative")
        return cls(llm_rows, rel_rows, llm_rows + alpha * rel_rows)

    def to_dict(self) -> dict:
        return {"llm_rows": float(self.llm_rows), "rel_rows": float(self.rel_rows), "total": float(self.total)}


@dataclass
class Stats:
    """Statistics; anything set here overrides the corresponding estimate.

    ``node_rows`` holds output cardinalities of nodes, ``distinct`` holds
    distinct-input counts keyed by ``(node, filter node)``, and ``column_ndv``
    feeds equi-join estimates.
    """

    table_rows: dict[str, float] = field(default_factory=dict)
    node_rows: dict[int, float] = field(default_factory=dict)
    distinct: dict[tuple[int, int], float] = field(default_factory=dict)
    column_ndv: dict[ColumnRef, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "table_rows": self.table_rows,
            "node_rows": {str(k): v for k, v in self.node_rows.items()},
            "distinct": [[u, f, v] for (u, f), v in sorted(self.distinct.items())],
            "column_ndv": {str(k): v for k, v in self.column_ndv.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Stats:
        return cls(
            table_rows=dict(d.get("table_rows", {})),
            node_rows={int(k): v for k, v in d.get("node_rows", {}).items()},
            distinct={(int(u), int(f)): v for u, f, v in d.get("distinct", [])},
            column_ndv={ColumnRef.parse(k): v for k, v in d.get("column_ndv", {}).items()},
        )


def stats_from_data(data) -> Stats:
    """Row counts and per-column distinct counts from loaded relations."""
    st = Stats()
    for table, rel in data.items():
        st.table_rows[table] = len(rel.rows)
        for i, (col, _) in enumerate(rel.schema):
            st.column_ndv[col] = len({r[i] for r in rel.rows if r[i] is not None})
    return st


def exact_stats(tree: PlanTree, data, oracle=None) -> Stats:
    """Exact cardinalities and distinct counts measured on the filter-free plan.

    Distinct counts are recorded for every filter at each of its legal
    positions, which is everything the placement search consults.
    """
    from .executor import execute
    from .oracle import MockOracle

    st = stats_from_data(data)
    sk = skeleton(tree)
    oracle = oracle if oracle is not None else MockOracle()
    _, metrics = execute(sk, data, oracle)
    st.node_rows.update(metrics.rows_per_node)
    for f in sorted(tree.nodes_of(Kind.SEM_FILTER)):
        refs = tree[f].semantic.referenced_columns
        for u in legal_positions(tree, f):
            sub = PlanTree(u, {n: sk[n] for n in sk.walk(u)}, sk.catalog)
            rel, _ = execute(sub, data, oracle)
            idx = [rel.index(r) for r in refs]
            seen = {tuple(row[i] for i in idx) for row in rel.rows}
            st.distinct[(u, f)] = sum(1 for v in seen if any(x is not None for x in v))
    return st


# ---------------------------------------------------------------------------
# primitive estimates


def combined_selectivity(tables, S, model: SelectivityModel, filters: dict[int, SemanticFilterDescriptor]) -> float:
    """Product of selectivities of filters in ``S`` that touch ``tables``."""
    tables = set(tables)
    out = 1.0
    for fid in sorted(S):
        if fid not in filters:
            raise PlanError(f"unknown filter id {fid}")
        if filters[fid].referenced_tables & tables:
            out *= model.sf(fid)
    return out


def _conjuncts(pred) -> int:
    return len(pred.args) if isinstance(pred, And) else 1


def _ndv(tree: PlanTree, col: ColumnRef, side_rows: float, stats: Stats) -> float:
    if col in stats.column_ndv:
        base = stats.column_ndv[col]
    elif not col.derived and col.table in stats.table_rows:
        base = stats.table_rows[col.table]
    else:
        base = side_rows
    return max(1.0, min(base, side_rows))


def output_rows(tree: PlanTree, node: int, stats: Stats, model: SelectivityModel | None = None,
                _memo: dict | None = None) -> float:
    """Estimated output cardinality of ``node`` (semantic filters count as pass-through)."""
    model = model or SelectivityModel()
    memo = _memo if _memo is not None else {}
    if node in memo:
        return memo[node]
    if node in stats.node_rows:
        memo[node] = float(stats.node_rows[node])
        return memo[node]
    n = tree[node]
    k = n.kind
    kids = [output_rows(tree, c, stats, model, memo) for c in n.children]
    if k is Kind.TABLE_SCAN:
        if n.table not in stats.table_rows:
            raise PlanError(f"no row count for table {n.table!r}")
        v = float(stats.table_rows[n.table])
    elif k is Kind.REL_FILTER:
        v = kids[0] * model.relational_selectivity ** _conjuncts(n.predicate)
    elif k is Kind.INNER_JOIN:
        left, right = kids
        if not n.keys:
            v = left * right
        else:
            denom = max(
                max(_ndv(tree, a, left, stats), _ndv(tree, b, right, stats)) for a, b in n.keys
            )
            v = left * right / denom
    elif k is Kind.CROSS_JOIN:
        v = kids[0] * kids[1]
    elif k is Kind.UNION:
        v = kids[0] + kids[1]
    elif k is Kind.LIMIT:
        v = min(kids[0], float(n.limit))
    elif k is Kind.AGGREGATE:
        if not n.group_by:
            v = 1.0
        else:
            groups = 1.0
            for c in n.group_by:
                groups *= _ndv(tree, c, kids[0], stats)
            v = min(kids[0], groups)
    else:  # Project, Sort, SemProject, SemFilter
        v = kids[0]
    memo[node] = v
    return v


def relational_cost(tree: PlanTree, node: int, stats: Stats, model: SelectivityModel | None = None) -> float:
    """Rows processed by ``node`` on its unfiltered input.

    Output cardinality for most operators; Aggregate is charged its input.
    """
    n = tree[node]
    if n.kind is Kind.AGGREGATE and node not in stats.node_rows:
        return output_rows(tree, n.children[0], stats, model)
    return output_rows(tree, node, stats, model)


def distinct_count(tree: PlanTree, node: int, filter: SemanticFilterDescriptor, model: SelectivityModel,
                   stats: Stats) -> float:
    """Estimated distinct inputs for ``filter`` if it sat directly above ``node``.

    Each referenced base table contributes its size, discounted by every
    operator on the path from its scan up to ``node``: inner joins by the join
    selectivity, semantic filters by their selectivity, relational filters by
    the relational selectivity. Multi-table filters multiply the per-table
    terms.
    """
    key = (node, filter.filter_node)
    if key in stats.distinct:
        return float(stats.distinct[key])
    scans = {tree[s].table: s for s in tree.walk(node) if tree[s].kind is Kind.TABLE_SCAN}
    missing = filter.referenced_tables - set(scans)
    if missing:
        raise PlanError(f"node {node} is not above tables {sorted(missing)} of filter {filter.filter_node}")
    total = 1.0
    for table in sorted(filter.referenced_tables):
        if table not in stats.table_rows:
            raise PlanError(f"no row count for table {table!r}")
        v = float(stats.table_rows[table])
        x = scans[table]
        while x != node:
            x = tree.parent(x)
            xn = tree[x]
            if xn.kind is Kind.INNER_JOIN:
                v *= model.join_distinct_selectivity
            elif xn.kind is Kind.SEM_FILTER and x != filter.filter_node:
                v *= model.sf(x)
            elif xn.kind is Kind.REL_FILTER:
                v *= model.relational_selectivity ** _conjuncts(xn.predicate)
        total *= v
    return total


def cache_probe_cost(tree: PlanTree, join_node: int, config: OptimizerConfig, stats: Stats,
                     model: SelectivityModel | None = None) -> float:
    """Join output rows times semantic filters above the join, in row-equivalents."""
    n = tree[join_node]
    if n.kind not in (Kind.INNER_JOIN, Kind.CROSS_JOIN):
        return 0.0
    above = sum(1 for a in tree.ancestors(join_node) if tree[a].kind is Kind.SEM_FILTER)
    return output_rows(tree, join_node, stats, model) * above * config.cache_probe_cost


# ---------------------------------------------------------------------------
# shared context for the placement searches


class CostContext:
    """Precomputed primitives over the filter-free plan.

    Both the dynamic program and the brute-force enumerator read costs only
    through :meth:`c`, :meth:`probe`, :meth:`n_distinct` and :meth:`sel`, so
    their totals agree exactly when ``exact`` arithmetic is used.
    """

    def __init__(self, tree: PlanTree, model: SelectivityModel, config: OptimizerConfig, stats: Stats,
                 filters: list[SemanticFilterDescriptor] | None = None, exact: bool = False):
        self.tree = tree
        self.model = model
        self.config = config
        self.stats = stats
        self.exact = exact
        self.num = Fraction if exact else float
        self.filters = filters if filters is not None else describe_filters(
            tree, model.per_filter_overrides, model.default_sf_selectivity)
        self.n = len(self.filters)
        self.fid = [f.filter_node for f in self.filters]
        self.skeleton = skeleton(tree)
        sk = self.skeleton
        self.alpha = self.num(config.alpha)
        self.probe_weight = self.num(config.cache_probe_cost)
        self.s = [self.num(model.sf(f)) for f in self.fid]
        self.origin = [f.original_position for f in self.filters]
        self.legal = [legal_positions(tree, f) for f in self.fid]
        self.legal_set = [set(x) for x in self.legal]
        memo: dict = {}
        self._rows = {u: self.num(output_rows(sk, u, stats, model, memo)) for u in sk.walk()}
        self._c = {u: self.num(relational_cost(sk, u, stats, model)) for u in sk.walk()}
        self.tables = {u: tables_under(sk, u) for u in sk.walk()}
        self.is_join = {u: sk[u].kind in (Kind.INNER_JOIN, Kind.CROSS_JOIN) for u in sk.walk()}
        # filters whose original position lies in each subtree
        self.below_mask: dict[int, int] = {}
        for u in sk.postorder():
            m = 0
            for c in sk[u].children:
                m |= self.below_mask[c]
            for i, o in enumerate(self.origin):
                if o == u:
                    m |= 1 << i
            self.below_mask[u] = m
        self._touch = {}
        self._n: dict[tuple[int, int], Any] = {}
        self._sel: dict[int, Any] = {}

    # primitives ---------------------------------------------------------

    def c(self, u: int):
        return self._c[u]

    def rows(self, u: int):
        return self._rows[u]

    def probe(self, u: int, placed_below: int):
        """Cache-probe rows charged at join ``u`` before the discount by ``sel``."""
        if not self.is_join[u]:
            return self.num(0)
        pending = bin(self.below_mask[u] & ~placed_below).count("1")
        return self._rows[u] * pending * self.probe_weight

    def n_distinct(self, u: int, i: int):
        key = (u, i)
        if key not in self._n:
            self._n[key] = self.num(distinct_count(self.skeleton, u, self.filters[i], self.model, self.stats))
        return self._n[key]

    def sel(self, tables: frozenset, S: int):
        touch = self._touch.get(tables)
        if touch is None:
            touch = sum(1 << i for i in range(self.n) if self.filters[i].referenced_tables & tables)
            self._touch[tables] = touch
        key = S & touch
        out = self._sel.get(key)
        if out is None:
            out = self.num(1)
            for i in range(self.n):
                if key >> i & 1:
                    out *= self.s[i]
            self._sel[key] = out
        return out

    def ref(self, i: int) -> frozenset:
        return self.filters[i].referenced_tables

    def better(self, a, b) -> bool:
        """Strict improvement; float mode ignores differences at rounding level."""
        if self.exact:
            return a < b
        return a < b - FLOAT_TIE_TOLERANCE * max(1.0, abs(b))


def load_cost_config(path: str | Path | None = None, **flags) -> tuple[SelectivityModel, OptimizerConfig]:
    """Merge a JSON config file with explicit flags (flags win over the file)."""
    raw: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    for k, v in flags.items():
        if v is not None:
            raw[k] = v
    model = SelectivityModel(
        default_sf_selectivity=float(raw.get("sf_selectivity", 0.2)),
        join_distinct_selectivity=float(raw.get("join_selectivity", DEFAULT_JOIN_SELECTIVITY)),
        relational_selectivity=float(raw.get("rel_selectivity", DEFAULT_REL_SELECTIVITY)),
        per_filter_overrides={int(k): float(v) for k, v in raw.get("overrides", {}).items()},
    )
    config = OptimizerConfig(alpha=float(raw.get("alpha", DEFAULT_ALPHA)),
                             cache_probe_cost=float(raw.get("cache_probe_cost", 1.0)))
    return model, config
