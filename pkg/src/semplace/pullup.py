"""Greedy semantic-filter pull-up and the exact distinct-input measure behind it.

Under function caching a semantic filter costs one call per distinct non-null
input. Moving it upward across relational filters, projections, inner and
cross joins never increases that count, so the greedy pass lifts every filter
until it meets the root, a block operator, or another semantic filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .plan import (
    Kind,
    PlanError,
    PlanTree,
    SemanticPredicate,
    is_block_operator,
)

DEFAULT_SF_SELECTIVITY = 0.2


@dataclass(frozen=True)
class SemanticFilterDescriptor:
    """A movable semantic filter as the optimizers see it."""

    filter_node: int
    predicate: SemanticPredicate
    referenced_tables: frozenset[str]
    original_position: int
    selectivity: float = DEFAULT_SF_SELECTIVITY

    def __post_init__(self):
        if not 0.0 < self.selectivity <= 1.0:
            raise ValueError(f"selectivity {self.selectivity} outside (0, 1]")


def is_barrier(kind: Kind) -> bool:
    """Operators a semantic filter may not be moved across.

    Block operators change multiplicity or ordering; semantic projections hold
    the positions fixed by simplification.
    """
    return is_block_operator(kind) or kind is Kind.SEM_PROJECT


def original_position(tree: PlanTree, filter_node: int) -> int:
    """First non-semantic-filter node below ``filter_node``."""
    n = tree[filter_node]
    if n.kind is not Kind.SEM_FILTER:
        raise PlanError(f"node {filter_node} is not a semantic filter")
    x = n.children[0]
    while tree[x].kind is Kind.SEM_FILTER:
        x = tree[x].children[0]
    return x


def describe_filters(tree: PlanTree, selectivities: dict[int, float] | None = None,
                     default: float = DEFAULT_SF_SELECTIVITY) -> list[SemanticFilterDescriptor]:
    """Descriptors for every semantic filter, ordered by node id."""
    selectivities = selectivities or {}
    out = []
    for f in sorted(tree.nodes_of(Kind.SEM_FILTER)):
        n = tree[f]
        if n.semantic_join:
            raise PlanError(f"semantic join {f} must be decomposed before placement")
        out.append(SemanticFilterDescriptor(
            filter_node=f,
            predicate=n.semantic,
            referenced_tables=tree.base_tables_of(n.semantic.referenced_columns),
            original_position=original_position(tree, f),
            selectivity=selectivities.get(f, default),
        ))
    return out


def _widening_leaks(tree: PlanTree, project: int) -> bool:
    """Would extra columns appended to ``project`` reach a union or the plan output?"""
    x = tree.parent(project)
    while x is not None:
        k = tree[x].kind
        if k in (Kind.PROJECT, Kind.AGGREGATE):
            return False
        if k is Kind.UNION:
            return True
        x = tree.parent(x)
    return True


def _blocks_crossing(tree: PlanTree, filter_node: int, node: int) -> bool:
    """A Project may be crossed only if widening it stays invisible above."""
    n = tree[node]
    if n.kind is not Kind.PROJECT:
        return False
    needed = tree[filter_node].semantic.referenced_columns
    return not set(needed) <= set(n.columns) and _widening_leaks(tree, node)


def legal_positions(tree: PlanTree, filter_node: int) -> list[int]:
    """Nodes the filter may sit directly above, from its original position upward.

    Other semantic filters are transparent; the walk stops before the root,
    before any barrier, and before a projection whose widening would change
    the plan's output schema.
    """
    x = original_position(tree, filter_node)
    out = [x]
    while True:
        p = tree.parent(x)
        while p is not None and tree[p].kind is Kind.SEM_FILTER:
            p = tree.parent(p)
        if p is None or p == tree.root or is_barrier(tree[p].kind) or _blocks_crossing(tree, filter_node, p):
            return out
        out.append(p)
        x = p


def skeleton(tree: PlanTree) -> PlanTree:
    """The tree with every semantic filter removed (node ids unchanged)."""
    sk = tree.copy()
    for f in sorted(sk.nodes_of(Kind.SEM_FILTER)):
        sk.detach(f)
        del sk.nodes[f]
    sk.invalidate()
    return sk


# ---------------------------------------------------------------------------
# pull-up


@dataclass
class PullUpResult:
    tree: PlanTree
    trace: list[tuple[int, int]] = field(default_factory=list)  # (filter, crossed node)
    iterations: int = 0  # outer passes, including the final quiet one

    @property
    def swaps(self) -> int:
        return len(self.trace)


def _can_swap(tree: PlanTree, f: int) -> bool:
    p = tree.parent(f)
    if p is None or p == tree.root:
        return False
    k = tree[p].kind
    return not (is_barrier(k) or k is Kind.SEM_FILTER or _blocks_crossing(tree, f, p))


def pull_up_all(tree: PlanTree) -> PullUpResult:
    """Swap each semantic filter with its parent until no swap applies."""
    tree = tree.copy()
    result = PullUpResult(tree)
    filters = sorted(tree.nodes_of(Kind.SEM_FILTER))
    if not filters:
        return result
    changed = True
    while changed:
        changed = False
        result.iterations += 1
        for f in filters:
            while _can_swap(tree, f):
                p = tree.parent(f)
                pn = tree[p]
                if pn.kind is Kind.PROJECT:
                    for col in tree[f].semantic.referenced_columns:
                        if col not in pn.columns:
                            pn.columns.append(col)
                tree.swap_with_parent(f)
                result.trace.append((f, p))
                changed = True
    return result


# ---------------------------------------------------------------------------
# measurement


def place_filter_at(tree: PlanTree, filter_node: int, at: int) -> PlanTree:
    """Copy of ``tree`` with one filter moved directly above ``at``.

    ``at`` must lie on the filter's legal path; Projects on the way receive the
    filter's columns.
    """
    legal = legal_positions(tree, filter_node)
    if at not in legal:
        raise PlanError(f"node {at} is not a legal position for filter {filter_node} (legal: {legal})")
    t = tree.copy()
    f = t[filter_node]
    t.detach(filter_node)
    for x in legal[: legal.index(at) + 1]:
        if t[x].kind is Kind.PROJECT:
            for col in f.semantic.referenced_columns:
                if col not in t[x].columns:
                    t[x].columns.append(col)
    t.insert_above(at, filter_node)
    return t


def count_distinct_inputs(tree: PlanTree, filter: SemanticFilterDescriptor | int, at: int, data,
                          oracle=None) -> int:
    """Distinct non-null projections onto the filter's columns at ``at``.

    This is the exact number of oracle calls the filter costs when placed
    directly above ``at`` with caching on. Other semantic filters below ``at``
    are evaluated with ``oracle`` (a default mock when omitted).
    """
    from .executor import execute
    from .oracle import MockOracle

    fid = filter if isinstance(filter, int) else filter.filter_node
    t = place_filter_at(tree, fid, at)
    refs = t[fid].semantic.referenced_columns
    t.detach(fid)
    del t.nodes[fid]
    sub = PlanTree(at, {n: t[n] for n in t.walk(at)}, t.catalog)
    rel, _ = execute(sub, data, oracle if oracle is not None else MockOracle())
    idx = [rel.index(r) for r in refs]
    seen = {tuple(row[i] for i in idx) for row in rel.rows}
    return sum(1 for v in seen if any(x is not None for x in v))
