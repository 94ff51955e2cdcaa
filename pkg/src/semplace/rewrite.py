"""Equivalence-preserving rewrites that leave only semantic-filter placement open.

Two rewrites run to a fixed point:

* semantic projections move to their highest legal position, carrying every
  operator that reads their output column along with them;
* semantic joins (a keyless inner join fused with the semantic predicate above
  it) become a cross join plus an ordinary, movable semantic filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .plan import (
    Kind,
    PlanError,
    PlanTree,
    is_block_operator,
)


class RewriteError(PlanError):
    """A rewrite precondition failed or the fixed-point guard tripped."""


@dataclass
class RewriteStep:
    rewrite: str
    nodes: list[int]

    def to_dict(self) -> dict:
        return {"rewrite": self.rewrite, "nodes": list(self.nodes)}


@dataclass
class SimplifyResult:
    tree: PlanTree
    trace: list[RewriteStep] = field(default_factory=list)
    iterations: int = 0


# ---------------------------------------------------------------------------
# dependencies


def dependency_graph(tree: PlanTree) -> dict[int, set[int]]:
    """Map each node to the nodes producing derived columns it reads.

    Raises :class:`RewriteError` when a derived column has no producer or the
    graph has a cycle.
    """
    producers: dict = {}
    for nid, n in tree.nodes.items():
        for col in n.produced_columns():
            if col in producers:
                raise RewriteError(f"column {col} produced by nodes {producers[col]} and {nid}")
            producers[col] = nid
    edges: dict[int, set[int]] = {}
    for nid in tree.walk():
        deps = set()
        for col in tree[nid].referenced_columns():
            if col.derived:
                if col not in producers:
                    raise RewriteError(f"node {nid} reads {col}, which nothing produces")
                deps.add(producers[col])
        edges[nid] = deps
    _check_acyclic(edges)
    return edges


def _check_acyclic(edges: dict[int, set[int]]) -> None:
    state: dict[int, int] = {}

    def visit(u: int) -> None:
        state[u] = 1
        for v in edges.get(u, ()):
            s = state.get(v, 0)
            if s == 1:
                raise RewriteError(f"dependency cycle through node {v}")
            if s == 0:
                visit(v)
        state[u] = 2

    for u in edges:
        if state.get(u, 0) == 0:
            visit(u)


def _reads_any(tree: PlanTree, nid: int, cols: set) -> bool:
    return any(c in cols for c in tree[nid].referenced_columns())


def is_fused_semantic_join(tree: PlanTree, join_id: int) -> bool:
    n = tree[join_id]
    if n.kind is not Kind.INNER_JOIN or n.keys:
        return False
    p = tree.parent(join_id)
    return p is not None and tree[p].kind is Kind.SEM_FILTER and tree[p].semantic_join


# ---------------------------------------------------------------------------
# semantic projection pull-up


def pull_up_semantic_projections(tree: PlanTree, trace: list[RewriteStep] | None = None) -> PlanTree:
    """Move every SemProject as high as it can go, with its dependents riding along.

    Movement stops below the root, at block operators, at an unrelated
    SemProject, at a fused semantic join, and at any Project or binary operator
    that reads the moving columns.
    """
    tree = tree.copy()
    dependency_graph(tree)  # surfaces cycles and dangling references up front
    trace = trace if trace is not None else []
    changed = True
    while changed:
        changed = False
        for sp in sorted(tree.nodes_of(Kind.SEM_PROJECT)):
            if _pull_up_one(tree, sp, trace):
                changed = True
    return tree


def _pull_up_one(tree: PlanTree, sp: int, trace: list[RewriteStep]) -> bool:
    group = [sp]
    produced = set(tree[sp].produced_columns())
    top = sp
    moved = False
    while True:
        p = tree.parent(top)
        if p is None or p == tree.root:
            break
        pn = tree[p]
        if is_block_operator(pn.kind):
            break
        if _reads_any(tree, p, produced):
            if pn.kind in (Kind.REL_FILTER, Kind.SEM_FILTER, Kind.SEM_PROJECT) and not pn.semantic_join:
                group.append(p)
                produced |= set(pn.produced_columns())
                top = p
                continue
            break
        if pn.kind is Kind.SEM_PROJECT or pn.semantic_join:
            break
        if pn.kind is Kind.INNER_JOIN and is_fused_semantic_join(tree, p):
            break
        # move the independent parent below the group
        bottom = tree[sp]
        below = bottom.children[0]
        grand = tree.parent(p)
        pn.children[pn.children.index(top)] = below
        bottom.children = [p]
        tree.replace_child(grand, p, top)
        if pn.kind is Kind.PROJECT:
            have = set(pn.columns)
            for member in group:
                for col in tree[member].referenced_columns():
                    if col not in produced and col not in have:
                        pn.columns.append(col)
                        have.add(col)
        tree.invalidate()
        trace.append(RewriteStep("pull_up_semantic_projection", [sp, p]))
        moved = True
    return moved


# ---------------------------------------------------------------------------
# semantic join decomposition


def decompose_semantic_joins(tree: PlanTree, trace: list[RewriteStep] | None = None) -> PlanTree:
    """Rewrite each fused semantic join as CrossJoin + SemFilter.

    When anything was decomposed, relational filters sitting above the new
    semantic filters are pushed below them (and into a join input when they
    only read that input), so cheap predicates prune pairs before any LLM call.
    """
    tree = tree.copy()
    trace = trace if trace is not None else []
    done = []
    for sf in sorted(tree.nodes_of(Kind.SEM_FILTER)):
        n = tree[sf]
        if not n.semantic_join:
            continue
        child = tree[n.children[0]]
        if child.kind is not Kind.INNER_JOIN or child.keys:
            raise RewriteError(f"semantic join {sf} is not attached to a keyless inner join")
        child.kind = Kind.CROSS_JOIN
        child.keys = None
        child.decomposed = True
        n.semantic_join = False
        done.append(sf)
        trace.append(RewriteStep("decompose_semantic_join", [sf, child.id]))
    if done:
        tree.invalidate()
        _push_down_relational(tree, trace)
    return tree


def _push_down_relational(tree: PlanTree, trace: list[RewriteStep]) -> None:
    changed = True
    while changed:
        changed = False
        for f in sorted(tree.nodes_of(Kind.REL_FILTER)):
            while (crossed := _push_once(tree, f)) is not None:
                trace.append(RewriteStep("push_down_filter", [f, crossed]))
                changed = True


def _push_once(tree: PlanTree, f: int) -> int | None:
    node = tree[f]
    c = tree[node.children[0]]
    need = set(node.referenced_columns())
    if c.kind is Kind.SEM_FILTER:
        tree.swap_with_parent(c.id)
        return c.id
    if c.kind in (Kind.CROSS_JOIN, Kind.INNER_JOIN) and not is_fused_semantic_join(tree, c.id):
        for side in c.children:
            if need <= set(tree.output_columns(side)):
                parent = tree.parent(f)
                tree.replace_child(parent, f, c.id)
                c.children[c.children.index(side)] = f
                node.children = [side]
                tree.invalidate()
                return c.id
    return None


# ---------------------------------------------------------------------------
# fixed point


def simplify_to_fixed_point(tree: PlanTree) -> SimplifyResult:
    """Alternate both rewrites until neither changes the tree."""
    n_sp = len(tree.nodes_of(Kind.SEM_PROJECT))
    n_sj = sum(1 for s in tree.nodes_of(Kind.SEM_FILTER) if tree[s].semantic_join)
    budget = max(1, len(tree) * (n_sp + n_sj)) + 1
    trace: list[RewriteStep] = []
    current = tree
    for iteration in range(1, budget + 1):
        before = len(trace)
        current = pull_up_semantic_projections(current, trace)
        current = decompose_semantic_joins(current, trace)
        if len(trace) == before:
            return SimplifyResult(current, trace, iteration)
    raise RewriteError(f"rewrites did not converge within {budget} iterations")


def is_simplified(tree: PlanTree) -> bool:
    """True when no semantic join remains and no projection can move."""
    if any(tree[s].semantic_join for s in tree.nodes_of(Kind.SEM_FILTER)):
        return False
    probe: list[RewriteStep] = []
    pull_up_semantic_projections(tree, probe)
    return not probe


__all__ = [
    "RewriteError",
    "RewriteStep",
    "SimplifyResult",
    "decompose_semantic_joins",
    "dependency_graph",
    "is_fused_semantic_join",
    "is_simplified",
    "pull_up_semantic_projections",
    "simplify_to_fixed_point",
]
