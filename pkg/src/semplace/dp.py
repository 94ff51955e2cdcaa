"""Exact cost-based semantic-filter placement by dynamic programming over subsets.

``dp[u][S]`` is the cheapest cost of the subtree at ``u`` when exactly the
filters in bitmask ``S`` are applied at or below ``u``. States are filled
bottom-up; within a node, subsets go in increasing size so that placing a
filter directly above ``u`` can build on the smaller subset at the same node.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any

from .cost import CostContext, CostEstimate, OptimizerConfig, SelectivityModel, Stats
from .plan import Kind, PlanError, PlanTree
from .pullup import SemanticFilterDescriptor, pull_up_all

log = logging.getLogger(__name__)

MAX_FILTERS = 20
BRUTE_FORCE_MAX_FILTERS = 6
BRUTE_FORCE_MAX_NODES = 12


class PlacementError(PlanError):
    """No finite-cost placement exists, or a placement is illegal."""


@dataclass
class Placement:
    """Filter node -> node it sits directly above, plus the stacking order.

    ``stacks[u]`` lists the filters above ``u`` from bottom to top.
    """

    assignments: dict[int, int]
    stacks: dict[int, list[int]]
    estimated: CostEstimate | None = None
    value: Any = None  # objective as computed by the search that produced this

    def to_dict(self) -> dict:
        out = {
            "assignments": {str(f): u for f, u in sorted(self.assignments.items())},
            "stacks": {str(u): list(s) for u, s in sorted(self.stacks.items())},
        }
        if self.estimated is not None:
            out["estimated"] = self.estimated.to_dict()
        return out


@dataclass
class DPTable:
    """Finite ``dp`` values and traceback choices; absent entries are infinite."""

    value: dict[tuple[int, int], Any] = field(default_factory=dict)
    choice: dict[tuple[int, int], tuple] = field(default_factory=dict)
    expansions: int = 0

    def get(self, u: int, S: int):
        return self.value.get((u, S), math.inf)


def _submasks(mask: int):
    """All submasks of ``mask`` in increasing popcount order."""
    bits = [1 << i for i in range(mask.bit_length()) if mask >> i & 1]
    for r in range(len(bits) + 1):
        for combo in itertools.combinations(bits, r):
            yield sum(combo)


def _submasks_of(S: int):
    sub = S
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & S


@dataclass
class DPResult:
    placement: Placement
    table: DPTable
    context: CostContext


def dp_place(tree: PlanTree, model: SelectivityModel | None = None, config: OptimizerConfig | None = None,
             stats: Stats | None = None, filters: list[SemanticFilterDescriptor] | None = None, *,
             exact: bool = False, check_order: bool = False, full_convolution: bool = False) -> DPResult:
    """Cheapest placement of every semantic filter in a simplified tree.

    ``exact=True`` runs the arithmetic in :class:`fractions.Fraction`. Ties
    prefer keeping filters lower, then lower node ids, then lower filter ids.

    At a binary node each filter's original position lies under exactly one
    child, so only one split of ``S`` has finite cost on both sides and the
    default combine step evaluates just that split. ``full_convolution=True``
    scans every split instead.
    """
    model = model or SelectivityModel()
    config = config or OptimizerConfig()
    stats = stats or Stats()
    ctx = CostContext(tree, model, config, stats, filters, exact=exact)
    if ctx.n > MAX_FILTERS:
        raise PlacementError(f"{ctx.n} filters exceed the subset limit of {MAX_FILTERS}")
    sk = ctx.skeleton
    table = DPTable()
    val = table.value
    choice = table.choice
    done_sizes: dict[int, int] = {}

    for u in sk.postorder():
        node = sk[u]
        F = ctx.below_mask[u]
        placeable = [i for i in range(ctx.n) if F >> i & 1 and u in ctx.legal_set[i]]
        tabs = ctx.tables[u]
        for S in _submasks(F):
            size = bin(S).count("1")
            if check_order:
                assert done_sizes.get(u, 0) <= size, "subset sizes must not decrease"
                done_sizes[u] = size
            table.expansions += 1
            best = math.inf
            how: tuple | None = None
            # Step 1: combine children
            if not node.children:
                if S == 0:
                    best, how = ctx.num(0), ("leaf",)
            elif len(node.children) == 1:
                v = val.get((node.children[0], S))
                if v is not None:
                    best, how = v, ("unary", node.children[0])
            else:
                a, b = node.children
                Fa, Fb = ctx.below_mask[a], ctx.below_mask[b]
                if full_convolution:
                    for S1 in _submasks_of(S):
                        table.expansions += 1
                        va, vb = val.get((a, S1)), val.get((b, S & ~S1))
                        if va is not None and vb is not None and (how is None or ctx.better(va + vb, best)):
                            best, how = va + vb, ("binary", S1)
                elif S & ~(Fa | Fb) == 0:
                    Sa_all = S & Fa
                    Sb = S & ~Fa
                    if Sb & ~Fb == 0:
                        # filters are owned by exactly one child, so the split is forced
                        table.expansions += 1
                        va, vb = val.get((a, Sa_all)), val.get((b, Sb))
                        if va is not None and vb is not None:
                            best, how = va + vb, ("binary", Sa_all)
            # Step 2: relational work at u on input already reduced by S
            if how is not None:
                sel = ctx.sel(tabs, S)
                best = best + ctx.alpha * (ctx.c(u) + ctx.probe(u, S)) * sel
            # Step 3: one more filter directly above u
            for i in placeable:
                if not S >> i & 1:
                    continue
                prior = S & ~(1 << i)
                pv = val.get((u, prior))
                table.expansions += 1
                if pv is None:
                    continue
                cand = pv + ctx.n_distinct(u, i) * ctx.sel(ctx.ref(i), prior)
                if how is None or ctx.better(cand, best):
                    best, how = cand, ("place", i, prior)
            if how is not None:
                val[(u, S)] = best
                choice[(u, S)] = how

    full = (1 << ctx.n) - 1
    root = sk.root
    if (root, full) not in val:
        bad = _unplaceable(ctx)
        raise PlacementError(f"no finite placement; filter {bad} cannot be placed")
    placement = _traceback(ctx, table, root, full)
    placement.value = val[(root, full)]
    placement.estimated = evaluate_placement(ctx, placement)
    return DPResult(placement, table, ctx)


def _unplaceable(ctx: CostContext) -> int:
    for i in range(ctx.n):
        if not ctx.legal[i]:
            return ctx.fid[i]
    return ctx.fid[0]


def _traceback(ctx: CostContext, table: DPTable, u: int, S: int) -> Placement:
    assignments: dict[int, int] = {}
    stacks: dict[int, list[int]] = {}
    todo = [(u, S)]
    while todo:
        u, S = todo.pop()
        how = table.choice[(u, S)]
        if how[0] == "place":
            _, i, prior = how
            f = ctx.fid[i]
            assignments[f] = u
            stacks.setdefault(u, []).insert(0, f)
            todo.append((u, prior))
        elif how[0] == "unary":
            todo.append((how[1], S))
        elif how[0] == "binary":
            a, b = ctx.skeleton[u].children
            todo.append((a, how[1]))
            todo.append((b, S & ~how[1]))
    return Placement(assignments, {k: stacks[k] for k in sorted(stacks)})


# ---------------------------------------------------------------------------
# independent evaluation and exhaustive search


def evaluate_placement(ctx: CostContext, placement: Placement) -> CostEstimate:
    """Objective of a complete placement computed directly from its definition."""
    index = {f: i for i, f in enumerate(ctx.fid)}
    for f, u in placement.assignments.items():
        if u not in ctx.legal_set[index[f]]:
            raise PlacementError(f"filter {f} cannot sit above node {u}")
    if set(placement.assignments) != set(ctx.fid):
        raise PlacementError("placement must assign every filter exactly once")
    sk = ctx.skeleton
    # filters sitting strictly inside each subtree
    inside: dict[int, int] = {}
    at: dict[int, int] = {}
    for f, u in placement.assignments.items():
        at[u] = at.get(u, 0) | 1 << index[f]
    for u in sk.postorder():
        m = 0
        for c in sk[u].children:
            m |= inside[c] | at.get(c, 0)
        inside[u] = m
    rel = ctx.num(0)
    for u in sk.walk():
        rel += (ctx.c(u) + ctx.probe(u, inside[u])) * ctx.sel(ctx.tables[u], inside[u])
    llm = ctx.num(0)
    for u, stack in placement.stacks.items():
        applied = inside[u]
        for f in stack:
            i = index[f]
            llm += ctx.n_distinct(u, i) * ctx.sel(ctx.ref(i), applied)
            applied |= 1 << i
    return CostEstimate.of(llm, rel, ctx.alpha)


def brute_force_place(tree: PlanTree, model: SelectivityModel | None = None, config: OptimizerConfig | None = None,
                      stats: Stats | None = None, filters: list[SemanticFilterDescriptor] | None = None, *,
                      exact: bool = False, max_filters: int = BRUTE_FORCE_MAX_FILTERS,
                      max_nodes: int = BRUTE_FORCE_MAX_NODES) -> Placement:
    """Minimum over every legal assignment and every stacking order.

    Stacks at different nodes do not interact, so each node's order is
    minimised on its own; per-node terms are memoised on the set of filters
    inside the subtree.
    """
    model = model or SelectivityModel()
    config = config or OptimizerConfig()
    stats = stats or Stats()
    ctx = CostContext(tree, model, config, stats, filters, exact=exact)
    if ctx.n > max_filters or len(ctx.skeleton) > max_nodes:
        raise PlacementError(
            f"brute force budget exceeded: {ctx.n} filters, {len(ctx.skeleton)} nodes "
            f"(limits {max_filters}, {max_nodes})")
    sk = ctx.skeleton
    order = sk.postorder()
    kids = {u: sk[u].children for u in order}
    rel_memo: dict[tuple[int, int], Any] = {}
    stack_memo: dict[tuple[int, tuple, int], tuple[Any, tuple]] = {}

    def rel_term(u: int, inside: int):
        key = (u, inside)
        if key not in rel_memo:
            rel_memo[key] = (ctx.c(u) + ctx.probe(u, inside)) * ctx.sel(ctx.tables[u], inside)
        return rel_memo[key]

    def best_stack(u: int, members: tuple, inside: int):
        key = (u, members, inside)
        if key not in stack_memo:
            best = None
            for perm in itertools.permutations(members):
                applied, llm = inside, ctx.num(0)
                for i in perm:
                    llm += ctx.n_distinct(u, i) * ctx.sel(ctx.ref(i), applied)
                    applied |= 1 << i
                if best is None or ctx.better(llm, best[0]):
                    best = (llm, perm)
            stack_memo[key] = best
        return stack_memo[key]

    best: Placement | None = None
    best_total = None
    for combo in itertools.product(*ctx.legal):
        at: dict[int, int] = {}
        for i, u in enumerate(combo):
            at[u] = at.get(u, 0) | 1 << i
        inside: dict[int, int] = {}
        rel = ctx.num(0)
        for u in order:
            m = 0
            for c in kids[u]:
                m |= inside[c] | at.get(c, 0)
            inside[u] = m
            rel += rel_term(u, m)
        llm = ctx.num(0)
        stacks = {}
        for u, mask in sorted(at.items()):
            members = tuple(i for i in range(ctx.n) if mask >> i & 1)
            v, perm = best_stack(u, members, inside[u])
            llm += v
            stacks[u] = [ctx.fid[i] for i in perm]
        total = llm + ctx.alpha * rel
        if best_total is None or ctx.better(total, best_total):
            best_total = total
            best = Placement({ctx.fid[i]: u for i, u in enumerate(combo)}, stacks,
                             CostEstimate.of(llm, rel, ctx.alpha))
    if best is None:
        raise PlacementError("no legal placement")
    best.value = best_total
    return best


# ---------------------------------------------------------------------------
# applying a placement


def placement_of(tree: PlanTree) -> Placement:
    """The placement a tree currently has."""
    from .pullup import original_position

    assignments: dict[int, int] = {}
    stacks: dict[int, list[int]] = {}
    for f in sorted(tree.nodes_of(Kind.SEM_FILTER)):
        u = original_position(tree, f)
        assignments[f] = u
    for u in sorted(set(assignments.values())):
        chain = []
        x = tree.parent(u)
        while x is not None and tree[x].kind is Kind.SEM_FILTER:
            chain.append(x)
            x = tree.parent(x)
        stacks[u] = chain
    return Placement(assignments, stacks)


def apply_placement(tree: PlanTree, placement: Placement) -> PlanTree:
    """Move every semantic filter to its assigned node.

    Filters sharing a node are stacked bottom to top in the order given by
    ``placement.stacks``, or by ascending filter id where no order is given.
    """
    from .pullup import legal_positions

    filters = sorted(tree.nodes_of(Kind.SEM_FILTER))
    if set(placement.assignments) != set(filters):
        raise PlacementError("placement must cover exactly the tree's semantic filters")
    paths = {f: legal_positions(tree, f) for f in filters}
    for f, u in placement.assignments.items():
        if u not in paths[f]:
            raise PlacementError(f"filter {f} cannot sit above node {u} (legal: {paths[f]})")
    t = tree.copy()
    for f in filters:
        t.detach(f)
    for f in filters:
        u = placement.assignments[f]
        path = paths[f]
        for x in path[: path.index(u) + 1]:
            if t[x].kind is Kind.PROJECT:
                for col in t[f].semantic.referenced_columns:
                    if col not in t[x].columns:
                        t[x].columns.append(col)
    stacks: dict[int, list[int]] = {}
    for f in sorted(placement.assignments):
        stacks.setdefault(placement.assignments[f], []).append(f)
    for u, given in placement.stacks.items():
        if sorted(given) != stacks.get(u, []):
            raise PlacementError(f"stack at node {u} does not match the filters assigned there")
        stacks[u] = list(given)
    for u in sorted(stacks):
        below = u
        for f in stacks[u]:
            t.insert_above(below, f)
            below = f
    t.invalidate()
    return t


def optimize_costmodel(tree: PlanTree, model: SelectivityModel | None = None,
                       config: OptimizerConfig | None = None, stats: Stats | None = None,
                       exact: bool = False) -> tuple[PlanTree, Placement | None]:
    """Place filters by the DP, falling back to greedy pull-up past the subset limit."""
    n = len(tree.nodes_of(Kind.SEM_FILTER))
    if n > MAX_FILTERS:
        log.warning("%d semantic filters exceed the DP limit of %d; using pull-up instead", n, MAX_FILTERS)
        return pull_up_all(tree).tree, None
    if n == 0:
        return tree.copy(), Placement({}, {})
    res = dp_place(tree, model, config, stats, exact=exact)
    return apply_placement(tree, res.placement), res.placement
