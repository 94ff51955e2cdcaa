"""Logical plan trees for hybrid semantic/relational queries.

A :class:`PlanTree` is a rooted operator tree whose nodes are addressed by
stable integer ids. Rewrites move nodes around but never renumber them, so a
placement decision can always be traced back to the node it concerns.
"""

from __future__ import annotations

import copy
import enum
import json
import re
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Any

DERIVED = "$"
"""Pseudo table name for columns computed inside the plan (SP outputs, aggregates)."""

COLUMN_TYPES = ("text", "integer", "float", "boolean")


class Kind(str, enum.Enum):
    TABLE_SCAN = "TableScan"
    REL_FILTER = "RelFilter"
    PROJECT = "Project"
    INNER_JOIN = "InnerJoin"
    CROSS_JOIN = "CrossJoin"
    AGGREGATE = "Aggregate"
    LIMIT = "Limit"
    UNION = "Union"
    SORT = "Sort"
    SEM_FILTER = "SemFilter"
    SEM_PROJECT = "SemProject"

    def __str__(self) -> str:
        return self.value


BINARY_KINDS = frozenset({Kind.INNER_JOIN, Kind.CROSS_JOIN, Kind.UNION})
BLOCK_KINDS = frozenset({Kind.LIMIT, Kind.UNION, Kind.AGGREGATE, Kind.SORT})


def arity(kind: Kind) -> int:
    if kind is Kind.TABLE_SCAN:
        return 0
    return 2 if kind in BINARY_KINDS else 1


def is_block_operator(kind: Kind | str) -> bool:
    """True for operators a semantic filter may never be moved across."""
    return Kind(kind) in BLOCK_KINDS


@dataclass(frozen=True, order=True)
class ColumnRef:
    table: str
    column: str

    def __post_init__(self):
        if not self.table or not self.column:
            raise ValueError(f"column reference needs table and column, got {self.table!r}.{self.column!r}")

    @property
    def derived(self) -> bool:
        return self.table == DERIVED

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"

    @classmethod
    def parse(cls, text: str) -> ColumnRef:
        table, sep, column = text.partition(".")
        if not sep:
            raise ValueError(f"expected 'table.column', got {text!r}")
        return cls(table, column)


def derived(name: str) -> ColumnRef:
    return ColumnRef(DERIVED, name)


_PLACEHOLDER = re.compile(r"\{([^{}]*)\}")


@dataclass(frozen=True)
class SemanticPredicate:
    """A natural-language template evaluated by the semantic oracle.

    ``template`` carries ``{table.column}`` placeholders (``{$.name}`` for
    derived columns) already resolved to base tables.
    """

    template: str
    referenced_columns: tuple[ColumnRef, ...]
    output_type: str = "boolean"

    def __post_init__(self):
        if self.output_type not in ("boolean", "text", "integer"):
            raise ValueError(f"bad semantic output type {self.output_type!r}")
        in_template = {ColumnRef.parse(p) for p in placeholders(self.template)}
        if in_template != set(self.referenced_columns):
            raise ValueError(
                f"placeholders {sorted(map(str, in_template))} do not match "
                f"referenced columns {sorted(map(str, self.referenced_columns))}"
            )

    @classmethod
    def from_template(cls, template: str, output_type: str = "boolean") -> SemanticPredicate:
        cols: list[ColumnRef] = []
        for p in placeholders(template):
            ref = ColumnRef.parse(p)
            if ref not in cols:
                cols.append(ref)
        return cls(template, tuple(cols), output_type)

    @property
    def tables(self) -> frozenset[str]:
        return frozenset(c.table for c in self.referenced_columns)


def placeholders(template: str) -> list[str]:
    return [m.group(1).strip() for m in _PLACEHOLDER.finditer(template)]


# ---------------------------------------------------------------------------
# relational predicates

COMPARISON_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    column: ColumnRef
    op: str
    value: Any = None
    other: ColumnRef | None = None  # column-to-column comparison when set

    def __post_init__(self):
        if self.op not in COMPARISON_OPS:
            raise ValueError(f"unsupported comparison {self.op!r}")

    def columns(self) -> list[ColumnRef]:
        return [self.column] if self.other is None else [self.column, self.other]


@dataclass(frozen=True)
class Between:
    column: ColumnRef
    low: Any
    high: Any

    def columns(self) -> list[ColumnRef]:
        return [self.column]


@dataclass(frozen=True)
class InList:
    column: ColumnRef
    values: tuple

    def columns(self) -> list[ColumnRef]:
        return [self.column]


@dataclass(frozen=True)
class IsNull:
    column: ColumnRef
    negated: bool = False

    def columns(self) -> list[ColumnRef]:
        return [self.column]


@dataclass(frozen=True)
class And:
    args: tuple

    def columns(self) -> list[ColumnRef]:
        return [c for a in self.args for c in a.columns()]


Predicate = Comparison | Between | InList | IsNull | And


@dataclass(frozen=True)
class AggregateCall:
    func: str  # count | sum | min | max | avg
    column: ColumnRef | None  # None means COUNT(*)
    alias: str

    @property
    def output(self) -> ColumnRef:
        return derived(self.alias)


@dataclass(frozen=True)
class SortKey:
    column: ColumnRef
    descending: bool = False


# ---------------------------------------------------------------------------
# nodes and trees


_LIST_FIELDS = ("children", "columns", "keys", "group_by", "aggregates", "sort_keys")


@dataclass
class PlanNode:
    id: int
    kind: Kind
    children: list[int] = field(default_factory=list)
    table: str | None = None  # TableScan
    predicate: Predicate | None = None  # RelFilter
    columns: list[ColumnRef] | None = None  # Project
    keys: list[tuple[ColumnRef, ColumnRef]] | None = None  # InnerJoin (left, right)
    semantic: SemanticPredicate | None = None  # SemFilter / SemProject
    output: str | None = None  # SemProject output column name
    semantic_join: bool = False  # SemFilter still fused with the join below it
    decomposed: bool = False  # CrossJoin introduced by SJ decomposition
    group_by: list[ColumnRef] | None = None  # Aggregate
    aggregates: list[AggregateCall] | None = None
    limit: int | None = None
    sort_keys: list[SortKey] | None = None

    def __post_init__(self):
        self.kind = Kind(self.kind)

    def clone(self) -> PlanNode:
        """Independent copy; payload objects are immutable, so only lists are copied."""
        out = copy.copy(self)
        for name in _LIST_FIELDS:
            v = getattr(self, name)
            if v is not None:
                setattr(out, name, list(v))
        return out

    def referenced_columns(self) -> list[ColumnRef]:
        """Columns this node reads from its input."""
        k = self.kind
        if k is Kind.REL_FILTER:
            return list(self.predicate.columns())
        if k is Kind.PROJECT:
            return list(self.columns)
        if k is Kind.INNER_JOIN:
            return [c for pair in self.keys for c in pair]
        if k in (Kind.SEM_FILTER, Kind.SEM_PROJECT):
            return list(self.semantic.referenced_columns)
        if k is Kind.AGGREGATE:
            cols = list(self.group_by)
            cols += [a.column for a in self.aggregates if a.column is not None]
            return cols
        if k is Kind.SORT:
            return [s.column for s in self.sort_keys]
        return []

    def produced_columns(self) -> list[ColumnRef]:
        """Columns this node creates (not merely forwards)."""
        if self.kind is Kind.SEM_PROJECT:
            return [derived(self.output)]
        if self.kind is Kind.AGGREGATE:
            return [a.output for a in self.aggregates]
        return []

    def label(self) -> str:
        k = self.kind
        if k is Kind.TABLE_SCAN:
            return f"Scan({self.table})"
        if k is Kind.REL_FILTER:
            return f"σ[{format_predicate(self.predicate)}]"
        if k is Kind.PROJECT:
            return "π[" + ", ".join(map(str, self.columns)) + "]"
        if k is Kind.INNER_JOIN:
            if not self.keys:
                return "⋈[]"
            return "⋈[" + ", ".join(f"{a} = {b}" for a, b in self.keys) + "]"
        if k is Kind.CROSS_JOIN:
            return "×" + ("(sj)" if self.decomposed else "")
        if k is Kind.SEM_FILTER:
            return ("SJ" if self.semantic_join else "SF") + f"['{self.semantic.template}']"
        if k is Kind.SEM_PROJECT:
            return f"SP[{self.output} := '{self.semantic.template}']"
        if k is Kind.AGGREGATE:
            aggs = ", ".join(f"{a.func}({a.column or '*'}) as {a.alias}" for a in self.aggregates)
            return f"γ[{', '.join(map(str, self.group_by))}; {aggs}]"
        if k is Kind.LIMIT:
            return f"Limit {self.limit}"
        if k is Kind.SORT:
            return "Sort[" + ", ".join(f"{s.column}{' desc' if s.descending else ''}" for s in self.sort_keys) + "]"
        return str(k)


def format_predicate(p: Predicate) -> str:
    if isinstance(p, Comparison):
        rhs = str(p.other) if p.other is not None else repr(p.value)
        return f"{p.column} {p.op} {rhs}"
    if isinstance(p, Between):
        return f"{p.column} between {p.low!r} and {p.high!r}"
    if isinstance(p, InList):
        return f"{p.column} in {list(p.values)!r}"
    if isinstance(p, IsNull):
        return f"{p.column} is {'not ' if p.negated else ''}null"
    return " and ".join(format_predicate(a) for a in p.args)


Catalog = dict[str, list[tuple[str, str]]]


@dataclass(frozen=True)
class Violation:
    node: int | None
    message: str

    def __str__(self) -> str:
        where = "tree" if self.node is None else f"node {self.node}"
        return f"{where}: {self.message}"


class PlanError(ValueError):
    pass


class PlanTree:
    """Rooted operator tree plus the catalog it is bound against.

    Trees are treated as values: optimizers call :meth:`copy` and mutate the
    copy. The parent map and ``tab(u)`` cache are rebuilt lazily after any
    structural mutation.
    """

    def __init__(self, root: int, nodes: dict[int, PlanNode], catalog: Catalog):
        self.root = root
        self.nodes = nodes
        self.catalog = {t: list(map(tuple, cols)) for t, cols in catalog.items()}
        self._parents: dict[int, int | None] | None = None
        self._tables: dict[int, frozenset[str]] = {}

    # -- basic access -----------------------------------------------------

    def __getitem__(self, node_id: int) -> PlanNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise PlanError(f"unknown node id {node_id}") from None

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def copy(self) -> PlanTree:
        return PlanTree(self.root, {k: n.clone() for k, n in self.nodes.items()}, self.catalog)

    def invalidate(self) -> None:
        self._parents = None
        self._tables.clear()

    def parent(self, node_id: int) -> int | None:
        if self._parents is None:
            parents: dict[int, int | None] = {self.root: None}
            for n in self.nodes.values():
                for c in n.children:
                    parents[c] = n.id
            self._parents = parents
        return self._parents.get(node_id)

    def ancestors(self, node_id: int) -> Iterator[int]:
        """Proper ancestors, nearest first."""
        p = self.parent(node_id)
        while p is not None:
            yield p
            p = self.parent(p)

    def walk(self, start: int | None = None) -> Iterator[int]:
        """Pre-order walk."""
        stack = [self.root if start is None else start]
        while stack:
            nid = stack.pop()
            yield nid
            stack.extend(reversed(self[nid].children))

    def postorder(self, start: int | None = None) -> list[int]:
        out: list[int] = []
        stack: list[tuple[int, bool]] = [(self.root if start is None else start, False)]
        while stack:
            nid, expanded = stack.pop()
            if expanded:
                out.append(nid)
                continue
            stack.append((nid, True))
            for c in reversed(self[nid].children):
                stack.append((c, False))
        return out

    def is_ancestor(self, upper: int, lower: int) -> bool:
        """True when ``upper`` is ``lower`` or one of its ancestors."""
        return upper == lower or upper in self.ancestors(lower)

    def depth(self) -> int:
        """Number of nodes on the longest root-to-leaf path."""
        best = 0
        stack = [(self.root, 1)]
        while stack:
            nid, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in self[nid].children)
        return best

    def nodes_of(self, *kinds: Kind) -> list[int]:
        return sorted(nid for nid, n in self.nodes.items() if n.kind in kinds)

    def next_id(self) -> int:
        return max(self.nodes, default=-1) + 1

    # -- schema -------------------------------------------------------------

    def column_type(self, ref: ColumnRef) -> str:
        for name, typ in self.catalog.get(ref.table, ()):
            if name == ref.column:
                return typ
        raise PlanError(f"unknown column {ref}")

    def table_columns(self, table: str) -> list[ColumnRef]:
        if table not in self.catalog:
            raise PlanError(f"unknown table {table!r}")
        return [ColumnRef(table, c) for c, _ in self.catalog[table]]

    def output_columns(self, node_id: int) -> list[ColumnRef]:
        """Ordered output schema of a node."""
        n = self[node_id]
        k = n.kind
        if k is Kind.TABLE_SCAN:
            return self.table_columns(n.table)
        if k is Kind.PROJECT:
            return list(n.columns)
        if k is Kind.AGGREGATE:
            return list(n.group_by) + [a.output for a in n.aggregates]
        if k in (Kind.INNER_JOIN, Kind.CROSS_JOIN):
            return self.output_columns(n.children[0]) + self.output_columns(n.children[1])
        if k is Kind.UNION:
            return self.output_columns(n.children[0])
        if k is Kind.SEM_PROJECT:
            return self.output_columns(n.children[0]) + [derived(n.output)]
        return self.output_columns(n.children[0])

    def producer(self, ref: ColumnRef) -> int | None:
        """Node creating a derived column, if any."""
        for nid, n in self.nodes.items():
            if ref in n.produced_columns():
                return nid
        return None

    def base_tables_of(self, refs: Iterable[ColumnRef]) -> frozenset[str]:
        """Base tables behind a column set; derived columns expand to their inputs."""
        out: set[str] = set()
        seen: set[ColumnRef] = set()
        todo = list(refs)
        while todo:
            ref = todo.pop()
            if ref in seen:
                continue
            seen.add(ref)
            if not ref.derived:
                out.add(ref.table)
                continue
            prod = self.producer(ref)
            if prod is not None:
                todo.extend(self[prod].referenced_columns())
        return frozenset(out)

    # -- mutation helpers (callers own the tree) -----------------------------

    def add(self, node: PlanNode) -> int:
        if node.id in self.nodes:
            raise PlanError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node
        self.invalidate()
        return node.id

    def replace_child(self, parent: int | None, old: int, new: int) -> None:
        if parent is None:
            self.root = new
        else:
            ch = self[parent].children
            ch[ch.index(old)] = new
        self.invalidate()

    def detach(self, node_id: int) -> None:
        """Unlink a unary node, splicing its child into its place."""
        n = self[node_id]
        if len(n.children) != 1:
            raise PlanError(f"can only detach unary nodes, node {node_id} is {n.kind}")
        parent = self.parent(node_id)
        child = n.children[0]
        self.replace_child(parent, node_id, child)
        n.children = []

    def insert_above(self, node_id: int, unary_id: int) -> None:
        """Link a detached unary node directly above ``node_id``."""
        parent = self.parent(node_id)
        self.replace_child(parent, node_id, unary_id)
        self[unary_id].children = [node_id]
        self.invalidate()

    def swap_with_parent(self, node_id: int) -> None:
        """Move unary ``node_id`` above its parent (which may be binary)."""
        n = self[node_id]
        p = self.parent(node_id)
        if p is None:
            raise PlanError(f"node {node_id} is the root")
        grand = self.parent(p)
        below = n.children[0]
        pn = self[p]
        pn.children[pn.children.index(node_id)] = below
        n.children = [p]
        self.replace_child(grand, p, node_id)

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": {str(nid): _node_to_dict(n) for nid, n in sorted(self.nodes.items())},
            "catalog": {t: [list(c) for c in cols] for t, cols in self.catalog.items()},
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> PlanTree:
        nodes = {int(k): _node_from_dict(int(k), v) for k, v in d["nodes"].items()}
        catalog = {t: [tuple(c) for c in cols] for t, cols in d["catalog"].items()}
        return cls(int(d["root"]), nodes, catalog)

    @classmethod
    def from_json(cls, text: str) -> PlanTree:
        return cls.from_dict(json.loads(text))

    def pretty(self, annotate=None) -> str:
        """Indented rendering, root first; ``annotate(node_id)`` adds a suffix."""
        lines: list[str] = []

        def rec(nid: int, indent: int) -> None:
            n = self[nid]
            extra = annotate(nid) if annotate else ""
            lines.append(f"{'  ' * indent}#{nid} {n.label()}{extra}")
            for c in n.children:
                rec(c, indent + 1)

        rec(self.root, 0)
        return "\n".join(lines)

    def __repr__(self) -> str:
        return f"PlanTree(root={self.root}, nodes={len(self.nodes)})"


# ---------------------------------------------------------------------------
# structural queries


def tables_under(tree: PlanTree, node_id: int) -> frozenset[str]:
    """Base tables scanned in the subtree rooted at ``node_id``."""
    cached = tree._tables.get(node_id)
    if cached is not None:
        return cached
    n = tree[node_id]
    if n.kind is Kind.TABLE_SCAN:
        out = frozenset({n.table})
    else:
        out = frozenset().union(*(tables_under(tree, c) for c in n.children))
    tree._tables[node_id] = out
    return out


def validate(tree: PlanTree) -> list[Violation]:
    """Every structural problem in ``tree``; an empty list means valid."""
    out: list[Violation] = []
    if tree.root not in tree.nodes:
        return [Violation(None, f"root {tree.root} is not a node")]

    seen_parent: dict[int, int] = {}
    for nid, n in tree.nodes.items():
        if n.id != nid:
            out.append(Violation(nid, f"node keyed {nid} carries id {n.id}"))
        want = arity(n.kind)
        if len(n.children) != want:
            out.append(Violation(nid, f"{n.kind} needs {want} children, has {len(n.children)}"))
        for c in n.children:
            if c not in tree.nodes:
                out.append(Violation(nid, f"child {c} does not exist"))
            elif c in seen_parent:
                out.append(Violation(c, f"node has two parents ({seen_parent[c]} and {nid})"))
            else:
                seen_parent[c] = nid
    if tree.root in seen_parent:
        out.append(Violation(tree.root, "root has a parent"))
    if out:
        return out

    reachable: set[int] = set()
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if nid in reachable:
            out.append(Violation(nid, "cycle detected"))
            return out
        reachable.add(nid)
        stack.extend(tree.nodes[nid].children)
    for nid in sorted(set(tree.nodes) - reachable):
        out.append(Violation(nid, "node unreachable from root"))
    if out:
        return out

    for nid in tree.postorder():
        out.extend(_payload_violations(tree, tree.nodes[nid]))
    return out


def _payload_violations(tree: PlanTree, n: PlanNode) -> list[Violation]:
    out: list[Violation] = []
    k = n.kind
    if k is Kind.TABLE_SCAN:
        if n.table not in tree.catalog:
            out.append(Violation(n.id, f"unknown table {n.table!r}"))
        return out
    try:
        available = set(tree.output_columns(n.children[0]))
        if len(n.children) == 2:
            available |= set(tree.output_columns(n.children[1]))
    except PlanError as e:
        return [Violation(n.id, str(e))]

    payload_ok = {
        Kind.REL_FILTER: n.predicate is not None,
        Kind.PROJECT: bool(n.columns),
        Kind.INNER_JOIN: n.keys is not None,
        Kind.SEM_FILTER: n.semantic is not None,
        Kind.SEM_PROJECT: n.semantic is not None and bool(n.output),
        Kind.AGGREGATE: n.group_by is not None and n.aggregates is not None,
        Kind.LIMIT: n.limit is not None and n.limit >= 0,
        Kind.SORT: bool(n.sort_keys),
    }.get(k, True)
    if not payload_ok:
        return [Violation(n.id, f"{k} is missing its payload")]

    if k is Kind.SEM_FILTER and n.semantic.output_type != "boolean":
        out.append(Violation(n.id, "semantic filter must be boolean"))
    if k is Kind.SEM_PROJECT and n.semantic.output_type == "boolean":
        out.append(Violation(n.id, "semantic projection cannot be boolean"))
    if k is Kind.INNER_JOIN:
        left = set(tree.output_columns(n.children[0]))
        right = set(tree.output_columns(n.children[1]))
        for a, b in n.keys:
            if a not in left or b not in right:
                out.append(Violation(n.id, f"join key {a} = {b} not split across inputs"))
    if k is Kind.UNION:
        lw = len(tree.output_columns(n.children[0]))
        rw = len(tree.output_columns(n.children[1]))
        if lw != rw:
            out.append(Violation(n.id, f"union inputs have {lw} and {rw} columns"))
    for ref in n.referenced_columns():
        if ref not in available:
            out.append(Violation(n.id, f"column {ref} is not produced below"))
    return out


def structure_key(tree: PlanTree, node_id: int | None = None, *, ignore_markers: bool = True) -> tuple:
    """Id-free canonical form; equal keys mean isomorphic trees."""
    n = tree[tree.root if node_id is None else node_id]
    d = _node_to_dict(n)
    d.pop("id", None)
    d.pop("children", None)
    if ignore_markers:
        d.pop("decomposed", None)
        d.pop("semantic_join", None)
    payload = json.dumps(d, sort_keys=True)
    return (payload, tuple(structure_key(tree, c, ignore_markers=ignore_markers) for c in n.children))


# ---------------------------------------------------------------------------
# JSON encoding of node payloads


def _pred_to_dict(p: Predicate) -> dict:
    if isinstance(p, Comparison):
        d = {"op": p.op, "column": str(p.column)}
        if p.other is not None:
            d["other"] = str(p.other)
        else:
            d["value"] = p.value
        return d
    if isinstance(p, Between):
        return {"op": "between", "column": str(p.column), "low": p.low, "high": p.high}
    if isinstance(p, InList):
        return {"op": "in", "column": str(p.column), "values": list(p.values)}
    if isinstance(p, IsNull):
        return {"op": "is_null", "column": str(p.column), "negated": p.negated}
    return {"op": "and", "args": [_pred_to_dict(a) for a in p.args]}


def _pred_from_dict(d: dict) -> Predicate:
    op = d["op"]
    if op == "and":
        return And(tuple(_pred_from_dict(a) for a in d["args"]))
    col = ColumnRef.parse(d["column"])
    if op == "between":
        return Between(col, d["low"], d["high"])
    if op == "in":
        return InList(col, tuple(d["values"]))
    if op == "is_null":
        return IsNull(col, d.get("negated", False))
    if "other" in d:
        return Comparison(col, op, other=ColumnRef.parse(d["other"]))
    return Comparison(col, op, d.get("value"))


def _node_to_dict(n: PlanNode) -> dict:
    d: dict[str, Any] = {"kind": n.kind.value, "children": list(n.children), "id": n.id}
    k = n.kind
    if k is Kind.TABLE_SCAN:
        d["table"] = n.table
    elif k is Kind.REL_FILTER:
        d["predicate"] = _pred_to_dict(n.predicate)
    elif k is Kind.PROJECT:
        d["columns"] = [str(c) for c in n.columns]
    elif k is Kind.INNER_JOIN:
        d["keys"] = [[str(a), str(b)] for a, b in n.keys]
    elif k is Kind.CROSS_JOIN:
        d["decomposed"] = n.decomposed
    elif k in (Kind.SEM_FILTER, Kind.SEM_PROJECT):
        d["template"] = n.semantic.template
        d["output_type"] = n.semantic.output_type
        if k is Kind.SEM_PROJECT:
            d["output"] = n.output
        else:
            d["semantic_join"] = n.semantic_join
    elif k is Kind.AGGREGATE:
        d["group_by"] = [str(c) for c in n.group_by]
        d["aggregates"] = [
            {"func": a.func, "column": None if a.column is None else str(a.column), "alias": a.alias}
            for a in n.aggregates
        ]
    elif k is Kind.LIMIT:
        d["limit"] = n.limit
    elif k is Kind.SORT:
        d["sort_keys"] = [{"column": str(s.column), "descending": s.descending} for s in n.sort_keys]
    return d


def _node_from_dict(nid: int, d: dict) -> PlanNode:
    kind = Kind(d["kind"])
    n = PlanNode(nid, kind, [int(c) for c in d.get("children", [])])
    if kind is Kind.TABLE_SCAN:
        n.table = d["table"]
    elif kind is Kind.REL_FILTER:
        n.predicate = _pred_from_dict(d["predicate"])
    elif kind is Kind.PROJECT:
        n.columns = [ColumnRef.parse(c) for c in d["columns"]]
    elif kind is Kind.INNER_JOIN:
        n.keys = [(ColumnRef.parse(a), ColumnRef.parse(b)) for a, b in d["keys"]]
    elif kind is Kind.CROSS_JOIN:
        n.decomposed = bool(d.get("decomposed", False))
    elif kind in (Kind.SEM_FILTER, Kind.SEM_PROJECT):
        n.semantic = SemanticPredicate.from_template(d["template"], d.get("output_type", "boolean"))
        n.output = d.get("output")
        n.semantic_join = bool(d.get("semantic_join", False))
    elif kind is Kind.AGGREGATE:
        n.group_by = [ColumnRef.parse(c) for c in d["group_by"]]
        n.aggregates = [
            AggregateCall(a["func"], None if a["column"] is None else ColumnRef.parse(a["column"]), a["alias"])
            for a in d["aggregates"]
        ]
    elif kind is Kind.LIMIT:
        n.limit = int(d["limit"])
    elif kind is Kind.SORT:
        n.sort_keys = [SortKey(ColumnRef.parse(s["column"]), bool(s["descending"])) for s in d["sort_keys"]]
    return n


class TreeBuilder:
    """Small helper for assembling trees by hand (tests, workloads, parser)."""

    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.nodes: dict[int, PlanNode] = {}
        self._next = 0

    def _add(self, kind: Kind, children: list[int], **payload) -> int:
        nid = self._next
        self._next += 1
        self.nodes[nid] = PlanNode(nid, kind, list(children), **payload)
        return nid

    def scan(self, table: str) -> int:
        return self._add(Kind.TABLE_SCAN, [], table=table)

    def filter(self, child: int, predicate: Predicate) -> int:
        return self._add(Kind.REL_FILTER, [child], predicate=predicate)

    def project(self, child: int, columns: list[ColumnRef]) -> int:
        return self._add(Kind.PROJECT, [child], columns=list(columns))

    def join(self, left: int, right: int, keys: list[tuple[ColumnRef, ColumnRef]]) -> int:
        return self._add(Kind.INNER_JOIN, [left, right], keys=list(keys))

    def cross(self, left: int, right: int, decomposed: bool = False) -> int:
        return self._add(Kind.CROSS_JOIN, [left, right], decomposed=decomposed)

    def sem_filter(self, child: int, template: str, semantic_join: bool = False) -> int:
        return self._add(
            Kind.SEM_FILTER, [child], semantic=SemanticPredicate.from_template(template), semantic_join=semantic_join
        )

    def sem_project(self, child: int, template: str, output: str, output_type: str = "integer") -> int:
        return self._add(
            Kind.SEM_PROJECT, [child], semantic=SemanticPredicate.from_template(template, output_type), output=output
        )

    def aggregate(self, child: int, group_by: list[ColumnRef], aggregates: list[AggregateCall]) -> int:
        return self._add(Kind.AGGREGATE, [child], group_by=list(group_by), aggregates=list(aggregates))

    def limit(self, child: int, n: int) -> int:
        return self._add(Kind.LIMIT, [child], limit=n)

    def sort(self, child: int, keys: list[SortKey]) -> int:
        return self._add(Kind.SORT, [child], sort_keys=list(keys))

    def union(self, left: int, right: int) -> int:
        return self._add(Kind.UNION, [left, right])

    def build(self, root: int) -> PlanTree:
        return PlanTree(root, self.nodes, self.catalog)
