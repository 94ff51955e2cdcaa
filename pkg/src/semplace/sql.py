"""A small SQL dialect with ``SEMANTIC(...)`` predicates, parsed into plan trees.

Supported surface::

    [WITH name AS (select) [, ...]]
    SELECT item [, ...] FROM from_item [WHERE cond] [GROUP BY col [, ...]]
        [ORDER BY col [ASC|DESC] [, ...]] [LIMIT n]
    [UNION ALL select]

``SEMANTIC('...')`` is a boolean predicate usable in WHERE and JOIN ... ON;
``SEMANTIC_STRING('...')`` and ``SEMANTIC_INT('...')`` are projections and must
be aliased. Templates reference columns as ``{alias.column}``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .plan import (
    AggregateCall,
    And,
    Between,
    Catalog,
    ColumnRef,
    Comparison,
    InList,
    IsNull,
    Kind,
    PlanError,
    PlanNode,
    PlanTree,
    SemanticPredicate,
    SortKey,
    derived,
    placeholders,
    validate,
)


class SqlError(Exception):
    """Base class for positioned front-end errors."""

    def __init__(self, message: str, position: int, sql: str = "", expected: tuple[str, ...] = ()):
        self.message = message
        self.position = position
        self.expected = expected
        self.line, self.col = _line_col(sql, position)
        text = f"{message} at line {self.line}, column {self.col}"
        if expected:
            text += f" (expected {', '.join(expected)})"
        super().__init__(text)


class ParseError(SqlError):
    pass


class BindError(SqlError):
    pass


class RenderError(Exception):
    """The tree contains a construct the dialect cannot express."""


def _line_col(sql: str, pos: int) -> tuple[int, int]:
    before = sql[:pos]
    return before.count("\n") + 1, pos - (before.rfind("\n") + 1) + 1


# ---------------------------------------------------------------------------
# tokens

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "JOIN", "INNER", "CROSS", "ON", "AS",
    "ORDER", "BY", "ASC", "DESC", "LIMIT", "WITH", "BETWEEN", "IN", "IS", "NULL", "GROUP",
    "UNION", "ALL", "TRUE", "FALSE", "LEFT", "RIGHT", "FULL", "OUTER", "DISTINCT", "HAVING",
}
SEMANTIC_FUNCS = {"SEMANTIC": "boolean", "SEMANTIC_STRING": "text", "SEMANTIC_INT": "integer"}
AGG_FUNCS = {"COUNT", "SUM", "MIN", "MAX", "AVG"}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<qident>"(?:[^"]|"")+")
  | (?P<op><=|>=|!=|<>|[=<>(),.*;\-])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # kw | ident | number | string | op | eof
    value: Any
    pos: int


def tokenize(sql: str) -> list[Token]:
    out: list[Token] = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN.match(sql, pos)
        if m is None:
            if sql[pos] == "'":
                raise ParseError("unterminated string literal", pos, sql)
            raise ParseError(f"unexpected character {sql[pos]!r}", pos, sql)
        kind = m.lastgroup
        text = m.group()
        if kind == "ident":
            if text.upper() in KEYWORDS:
                out.append(Token("kw", text.upper(), pos))
            else:
                out.append(Token("ident", text, pos))
        elif kind == "qident":
            out.append(Token("ident", text[1:-1].replace('""', '"'), pos))
        elif kind == "number":
            out.append(Token("number", float(text) if "." in text else int(text), pos))
        elif kind == "string":
            out.append(Token("string", text[1:-1].replace("''", "'"), pos))
        elif kind == "op":
            out.append(Token("op", "!=" if text == "<>" else text, pos))
        pos = m.end()
    out.append(Token("eof", None, len(sql)))
    return out


# ---------------------------------------------------------------------------
# syntax tree


@dataclass
class ColExpr:
    qualifier: str | None
    name: str
    pos: int


@dataclass
class Literal:
    value: Any
    pos: int


@dataclass
class SemCall:
    func: str
    template: str
    pos: int


@dataclass
class Cmp:
    left: ColExpr
    op: str
    right: ColExpr | Literal
    pos: int


@dataclass
class BetweenCond:
    col: ColExpr
    low: Literal
    high: Literal
    pos: int


@dataclass
class InCond:
    col: ColExpr
    values: list[Literal]
    pos: int


@dataclass
class IsNullCond:
    col: ColExpr
    negated: bool
    pos: int


@dataclass
class OrCond:
    args: list
    pos: int


@dataclass
class SelectItem:
    expr: Any  # ColExpr | SemCall | AggExpr | "*"
    alias: str | None
    pos: int


@dataclass
class AggExpr:
    func: str
    col: ColExpr | None
    pos: int


@dataclass
class TableRef:
    name: str
    alias: str
    pos: int


@dataclass
class JoinRef:
    left: Any
    right: Any
    cross: bool
    on: list
    pos: int


@dataclass
class OrderItem:
    col: ColExpr
    descending: bool


@dataclass
class Select:
    items: list[SelectItem]
    source: Any
    where: list = field(default_factory=list)
    group_by: list[ColExpr] = field(default_factory=list)
    order_by: list[OrderItem] = field(default_factory=list)
    limit: int | None = None
    union: Select | None = None
    ctes: list[tuple[str, Select, int]] = field(default_factory=list)
    pos: int = 0


class _Parser:
    def __init__(self, sql: str):
        self.sql = sql
        self.toks = tokenize(sql)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at_kw(self, *words: str) -> bool:
        return self.tok.kind == "kw" and self.tok.value in words

    def at_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.value in ops

    def error(self, msg: str, *expected: str) -> ParseError:
        got = "end of input" if self.tok.kind == "eof" else repr(str(self.tok.value))
        return ParseError(f"{msg}, got {got}", self.tok.pos, self.sql, tuple(expected))

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            raise self.error("syntax error", word)
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            raise self.error("syntax error", repr(op))
        return self.advance()

    def expect_ident(self, what: str = "identifier") -> Token:
        if self.tok.kind != "ident":
            raise self.error("syntax error", what)
        return self.advance()

    # grammar
    def parse(self) -> Select:
        q = self.query()
        if self.at_op(";"):
            self.advance()
        if self.tok.kind != "eof":
            raise self.error("unexpected trailing input", "end of input")
        return q

    def query(self) -> Select:
        ctes = []
        if self.at_kw("WITH"):
            self.advance()
            while True:
                name = self.expect_ident("CTE name")
                self.expect_kw("AS")
                self.expect_op("(")
                body = self.select()
                self.expect_op(")")
                ctes.append((name.value, body, name.pos))
                if not self.at_op(","):
                    break
                self.advance()
        q = self.select()
        q.ctes = ctes
        return q

    def select(self) -> Select:
        start = self.expect_kw("SELECT")
        if self.at_kw("DISTINCT"):
            raise self.error("DISTINCT is not supported")
        items = [self.select_item()]
        while self.at_op(","):
            self.advance()
            items.append(self.select_item())
        self.expect_kw("FROM")
        source = self.from_clause()
        q = Select(items, source, pos=start.pos)
        if self.at_kw("WHERE"):
            self.advance()
            q.where = self.conjunction()
        if self.at_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            q.group_by = [self.column()]
            while self.at_op(","):
                self.advance()
                q.group_by.append(self.column())
        if self.at_kw("HAVING"):
            raise self.error("HAVING is not supported")
        if self.at_kw("ORDER"):
            self.advance()
            self.expect_kw("BY")
            q.order_by = [self.order_item()]
            while self.at_op(","):
                self.advance()
                q.order_by.append(self.order_item())
        if self.at_kw("LIMIT"):
            self.advance()
            if self.tok.kind != "number" or not isinstance(self.tok.value, int):
                raise self.error("syntax error", "integer")
            q.limit = self.advance().value
        if self.at_kw("UNION"):
            if q.order_by or q.limit is not None:
                raise self.error("ORDER BY / LIMIT before UNION is not supported")
            self.advance()
            self.expect_kw("ALL")
            q.union = self.select()
        return q

    def order_item(self) -> OrderItem:
        col = self.column()
        desc = False
        if self.at_kw("ASC", "DESC"):
            desc = self.advance().value == "DESC"
        return OrderItem(col, desc)

    def select_item(self) -> SelectItem:
        pos = self.tok.pos
        if self.at_op("*"):
            self.advance()
            return SelectItem("*", None, pos)
        if self.tok.kind == "ident" and self.toks[self.i + 1].kind == "op" and self.toks[self.i + 1].value == "(":
            fname = self.tok.value.upper()
            if fname in SEMANTIC_FUNCS:
                expr = self.semantic_call()
            elif fname in AGG_FUNCS:
                expr = self.aggregate()
            else:
                raise self.error(f"unknown function {self.tok.value!r}")
        else:
            expr = self.column()
        alias = None
        if self.at_kw("AS"):
            self.advance()
            alias = self.expect_ident("alias").value
        elif self.tok.kind == "ident":
            alias = self.advance().value
        return SelectItem(expr, alias, pos)

    def semantic_call(self) -> SemCall:
        name = self.advance()
        self.expect_op("(")
        if self.tok.kind != "string":
            raise self.error("syntax error", "template string")
        template = self.advance().value
        self.expect_op(")")
        return SemCall(name.value.upper(), template, name.pos)

    def aggregate(self) -> AggExpr:
        name = self.advance()
        self.expect_op("(")
        col = None
        if self.at_op("*"):
            if name.value.upper() != "COUNT":
                raise self.error("only COUNT accepts *")
            self.advance()
        else:
            col = self.column()
        self.expect_op(")")
        return AggExpr(name.value.upper(), col, name.pos)

    def column(self) -> ColExpr:
        first = self.expect_ident("column")
        if self.at_op("."):
            self.advance()
            second = self.expect_ident("column")
            return ColExpr(first.value, second.value, first.pos)
        return ColExpr(None, first.value, first.pos)

    def from_clause(self):
        left = self.from_primary()
        while True:
            pos = self.tok.pos
            if self.at_op(","):
                self.advance()
                left = JoinRef(left, self.from_primary(), True, [], pos)
            elif self.at_kw("CROSS"):
                self.advance()
                self.expect_kw("JOIN")
                left = JoinRef(left, self.from_primary(), True, [], pos)
            elif self.at_kw("JOIN", "INNER"):
                if self.advance().value == "INNER":
                    self.expect_kw("JOIN")
                right = self.from_primary()
                self.expect_kw("ON")
                left = JoinRef(left, right, False, self.conjunction(), pos)
            elif self.at_kw("LEFT", "RIGHT", "FULL", "OUTER"):
                raise self.error("outer joins are not supported")
            else:
                return left

    def from_primary(self):
        if self.at_op("("):
            self.advance()
            inner = self.from_clause()
            self.expect_op(")")
            return inner
        name = self.expect_ident("table name")
        alias = name.value
        if self.at_kw("AS"):
            self.advance()
            alias = self.expect_ident("alias").value
        elif self.tok.kind == "ident":
            alias = self.advance().value
        return TableRef(name.value, alias, name.pos)

    def conjunction(self) -> list:
        conds = [self.disjunction()]
        while self.at_kw("AND"):
            self.advance()
            conds.append(self.disjunction())
        return conds

    def disjunction(self):
        pos = self.tok.pos
        first = self.atom()
        if not self.at_kw("OR"):
            return first
        args = [first]
        while self.at_kw("OR"):
            self.advance()
            args.append(self.atom())
        return OrCond(args, pos)

    def atom(self):
        pos = self.tok.pos
        if self.at_op("("):
            self.advance()
            inner = self.conjunction()
            self.expect_op(")")
            if len(inner) == 1:
                return inner[0]
            return ("and", inner, pos)
        if self.at_kw("NOT"):
            raise self.error("NOT is not supported")
        if self.tok.kind == "ident" and self.tok.value.upper() in SEMANTIC_FUNCS and self.toks[self.i + 1].value == "(":
            return self.semantic_call()
        col = self.column()
        if self.at_kw("IS"):
            self.advance()
            negated = False
            if self.at_kw("NOT"):
                self.advance()
                negated = True
            self.expect_kw("NULL")
            return IsNullCond(col, negated, pos)
        if self.at_kw("BETWEEN"):
            self.advance()
            low = self.literal()
            self.expect_kw("AND")
            high = self.literal()
            return BetweenCond(col, low, high, pos)
        if self.at_kw("IN"):
            self.advance()
            self.expect_op("(")
            values = [self.literal()]
            while self.at_op(","):
                self.advance()
                values.append(self.literal())
            self.expect_op(")")
            return InCond(col, values, pos)
        if not self.at_op("=", "!=", "<", "<=", ">", ">="):
            raise self.error("syntax error", "comparison operator", "IS", "BETWEEN", "IN")
        op = self.advance().value
        if self.tok.kind == "ident":
            right = self.column()
        else:
            right = self.literal()
        return Cmp(col, op, right, pos)

    def literal(self) -> Literal:
        t = self.tok
        if t.kind in ("number", "string"):
            self.advance()
            return Literal(t.value, t.pos)
        if self.at_op("-") and self.toks[self.i + 1].kind == "number":
            self.advance()
            return Literal(-self.advance().value, t.pos)
        if self.at_kw("TRUE", "FALSE"):
            self.advance()
            return Literal(t.value == "TRUE", t.pos)
        if self.at_kw("NULL"):
            self.advance()
            return Literal(None, t.pos)
        raise self.error("syntax error", "literal")


def parse_syntax(sql: str) -> Select:
    """Syntax-only parse; raises :class:`ParseError`."""
    if not isinstance(sql, str) or not sql.strip():
        raise ParseError("empty query", 0, sql if isinstance(sql, str) else "")
    return _Parser(sql).parse()


# ---------------------------------------------------------------------------
# binding


@dataclass
class _Scope:
    """Name resolution for one SELECT: aliases and derived output names."""

    aliases: dict[str, str]  # alias -> base table (or CTE name)
    ctes: dict[str, dict[str, ColumnRef]]  # CTE alias -> output name -> column
    derived: dict[str, ColumnRef] = field(default_factory=dict)


@dataclass
class _Pending:
    kind: str  # rel | sem
    payload: Any
    columns: list[ColumnRef]
    pos: int
    from_on: JoinRef | None = None


class _Binder:
    def __init__(self, sql: str, catalog: Catalog):
        self.sql = sql
        self.catalog = {t: list(map(tuple, cols)) for t, cols in catalog.items()}
        self.nodes: dict[int, PlanNode] = {}
        self.next_id = 0
        self.used_tables: set[str] = set()
        self.join_nodes: dict[int, int] = {}

    def err(self, msg: str, pos: int) -> BindError:
        return BindError(msg, pos, self.sql)

    def add(self, kind: Kind, children: list[int], **payload) -> int:
        nid = self.next_id
        self.next_id += 1
        self.nodes[nid] = PlanNode(nid, kind, list(children), **payload)
        return nid

    def tree(self, root: int) -> PlanTree:
        return PlanTree(root, self.nodes, self.catalog)

    # -- query ------------------------------------------------------------

    def bind_query(self, q: Select, outer_ctes: dict | None = None) -> tuple[int, list[tuple[str, ColumnRef]]]:
        cte_bodies: dict[str, tuple[Select, int]] = dict(outer_ctes or {})
        for name, body, pos in q.ctes:
            if name in cte_bodies or name in self.catalog:
                raise self.err(f"duplicate relation name {name!r}", pos)
            cte_bodies[name] = (body, pos)
        root, outputs = self.bind_select(q, cte_bodies)
        if q.union is not None:
            right, right_out = self.bind_query(q.union, cte_bodies)
            if len(right_out) != len(outputs):
                raise self.err("UNION ALL inputs have different column counts", q.union.pos)
            root = self.add(Kind.UNION, [root, right])
        return root, outputs

    def bind_select(self, q: Select, ctes: dict) -> tuple[int, list[tuple[str, ColumnRef]]]:
        scope = _Scope({}, {})
        body = self.bind_from(q.source, scope, ctes)

        # projections declared in the SELECT list; names become visible to WHERE
        sem_items = []
        for item in q.items:
            if isinstance(item.expr, SemCall):
                if SEMANTIC_FUNCS[item.expr.func] == "boolean":
                    raise self.err("SEMANTIC(...) in the SELECT list must be SEMANTIC_STRING or SEMANTIC_INT", item.pos)
                if not item.alias:
                    raise self.err("semantic projection needs an alias (AS name)", item.pos)
                if item.alias in scope.derived:
                    raise self.err(f"duplicate output name {item.alias!r}", item.pos)
                sem_items.append(item)
                scope.derived[item.alias] = derived(item.alias)
        if sem_items and q.group_by:
            raise self.err("semantic projections cannot be combined with GROUP BY", sem_items[0].pos)

        # WHERE may reference the projections' output names
        pending: list[_Pending] = []
        self.collect_join_conditions(q.source, scope, pending)
        for cond in q.where:
            pending.append(self.bind_condition(cond, scope, where=True))

        plain = [p for p in pending if not any(c.derived for c in p.columns)]
        dependent = [p for p in pending if any(c.derived for c in p.columns)]
        for p in [p for p in plain if p.kind == "rel"] + [p for p in plain if p.kind == "sem"]:
            body = self.place_filter(body, p)
        for item in sem_items:
            pred = self.bind_template(item.expr.template, SEMANTIC_FUNCS[item.expr.func], scope, item.expr.pos)
            target = self.lowest_covering(body, pred.referenced_columns)
            nid = self.add(Kind.SEM_PROJECT, [], semantic=pred, output=item.alias)
            body = self.stack_above(body, target, nid)
        for p in [p for p in dependent if p.kind == "rel"] + [p for p in dependent if p.kind == "sem"]:
            body = self.place_filter(body, p)

        outputs = self.bind_outputs(q, scope)
        if q.group_by or any(isinstance(i.expr, AggExpr) for i in q.items):
            body, outputs = self.bind_aggregate(q, scope, body, outputs)
        if q.order_by:
            visible = {c for _, c in outputs} | set(self.output_columns(body))
            keys = []
            for o in q.order_by:
                ref = self.resolve_column(o.col, scope, extra={n: c for n, c in outputs})
                if ref not in visible:
                    raise self.err(f"ORDER BY column {ref} is not available", o.col.pos)
                keys.append(SortKey(ref, o.descending))
            body = self.add(Kind.SORT, [body], sort_keys=keys)
        root = self.add(Kind.PROJECT, [body], columns=[c for _, c in outputs])
        if q.limit is not None:
            root = self.add(Kind.LIMIT, [root], limit=q.limit)
        return root, outputs

    def bind_outputs(self, q: Select, scope: _Scope) -> list[tuple[str, ColumnRef]]:
        outputs: list[tuple[str, ColumnRef]] = []
        for item in q.items:
            if item.expr == "*":
                for alias, table in scope.aliases.items():
                    if alias in scope.ctes:
                        outputs.extend(scope.ctes[alias].items())
                    else:
                        outputs.extend((c, ColumnRef(table, c)) for c, _ in self.catalog[table])
            elif isinstance(item.expr, ColExpr):
                ref = self.resolve_column(item.expr, scope)
                outputs.append((item.alias or item.expr.name, ref))
            elif isinstance(item.expr, SemCall):
                outputs.append((item.alias, derived(item.alias)))
            elif isinstance(item.expr, AggExpr):
                if not item.alias:
                    raise self.err("aggregate needs an alias (AS name)", item.pos)
                outputs.append((item.alias, derived(item.alias)))
        refs = [c for _, c in outputs]
        if len(set(refs)) != len(refs):
            raise self.err("duplicate column in SELECT list", q.pos)
        return outputs

    def bind_aggregate(self, q, scope, body, outputs):
        group = [self.resolve_column(c, scope) for c in q.group_by]
        aggs = []
        for item in q.items:
            if isinstance(item.expr, AggExpr):
                col = None if item.expr.col is None else self.resolve_column(item.expr.col, scope)
                aggs.append(AggregateCall(item.expr.func.lower(), col, item.alias))
            elif isinstance(item.expr, ColExpr):
                ref = self.resolve_column(item.expr, scope)
                if ref not in group:
                    raise self.err(f"column {ref} must appear in GROUP BY", item.pos)
            elif item.expr == "*":
                raise self.err("SELECT * cannot be combined with aggregation", item.pos)
        body = self.add(Kind.AGGREGATE, [body], group_by=group, aggregates=aggs)
        return body, outputs

    # -- FROM -------------------------------------------------------------

    def bind_from(self, src, scope: _Scope, ctes: dict) -> int:
        if isinstance(src, TableRef):
            if src.alias in scope.aliases:
                raise self.err(f"duplicate alias {src.alias!r}", src.pos)
            if src.name in ctes:
                body, _ = ctes[src.name]
                inner_ctes = {k: v for k, v in ctes.items() if k != src.name}
                root, outputs = self.bind_query(body, inner_ctes)
                # the CTE's own projection is dropped: outer references go straight to its inputs
                node = self.nodes[root]
                if node.kind is Kind.PROJECT:
                    root = node.children[0]
                    del self.nodes[node.id]
                scope.aliases[src.alias] = src.name
                scope.ctes[src.alias] = dict(outputs)
                return root
            if src.name not in self.catalog:
                raise self.err(f"unknown table {src.name!r}", src.pos)
            if src.name in self.used_tables:
                raise self.err(f"table {src.name!r} is referenced twice; self-joins are not supported", src.pos)
            self.used_tables.add(src.name)
            scope.aliases[src.alias] = src.name
            return self.add(Kind.TABLE_SCAN, [], table=src.name)
        left = self.bind_from(src.left, scope, ctes)
        right = self.bind_from(src.right, scope, ctes)
        if src.cross:
            return self.add(Kind.CROSS_JOIN, [left, right])
        nid = self.add(Kind.INNER_JOIN, [left, right], keys=[])
        self.join_nodes[id(src)] = nid
        return nid

    def collect_join_conditions(self, src, scope: _Scope, pending: list[_Pending]) -> None:
        """Turn ON clauses into join keys (equalities across inputs) or pending filters."""
        if not isinstance(src, JoinRef):
            return
        self.collect_join_conditions(src.left, scope, pending)
        self.collect_join_conditions(src.right, scope, pending)
        if src.cross:
            return
        join_id = self.join_nodes[id(src)]
        node = self.nodes[join_id]
        node.keys = []
        left_cols = set(self.output_columns(node.children[0]))
        right_cols = set(self.output_columns(node.children[1]))
        for cond in src.on:
            if isinstance(cond, Cmp) and cond.op == "=" and isinstance(cond.right, ColExpr):
                a = self.resolve_column(cond.left, scope)
                b = self.resolve_column(cond.right, scope)
                if a in left_cols and b in right_cols:
                    node.keys.append((a, b))
                    continue
                if b in left_cols and a in right_cols:
                    node.keys.append((b, a))
                    continue
            p = self.bind_condition(cond, scope, where=False)
            p.from_on = src
            pending.append(p)

    # -- conditions -------------------------------------------------------

    def bind_condition(self, cond, scope: _Scope, where: bool) -> _Pending:
        if isinstance(cond, OrCond):
            if any(isinstance(a, SemCall) for a in cond.args):
                raise self.err("OR involving a SEMANTIC predicate is not supported; use AND-conjunctions", cond.pos)
            raise self.err("OR is not supported; only AND-conjunctions", cond.pos)
        if isinstance(cond, tuple):
            parts = [self.bind_condition(c, scope, where) for c in cond[1]]
            if any(p.kind == "sem" for p in parts):
                raise self.err("parenthesised groups may not contain SEMANTIC predicates", cond[2])
            pred = And(tuple(p.payload for p in parts))
            return _Pending("rel", pred, [c for p in parts for c in p.columns], cond[2])
        if isinstance(cond, SemCall):
            typ = SEMANTIC_FUNCS[cond.func]
            if typ != "boolean":
                raise self.err(f"{cond.func} returns {typ}; only boolean SEMANTIC(...) may filter rows", cond.pos)
            pred = self.bind_template(cond.template, "boolean", scope, cond.pos)
            return _Pending("sem", pred, list(pred.referenced_columns), cond.pos)
        if isinstance(cond, Cmp):
            col = self.resolve_column(cond.left, scope)
            if isinstance(cond.right, ColExpr):
                other = self.resolve_column(cond.right, scope)
                return _Pending("rel", Comparison(col, cond.op, other=other), [col, other], cond.pos)
            return _Pending("rel", Comparison(col, cond.op, cond.right.value), [col], cond.pos)
        if isinstance(cond, BetweenCond):
            col = self.resolve_column(cond.col, scope)
            return _Pending("rel", Between(col, cond.low.value, cond.high.value), [col], cond.pos)
        if isinstance(cond, InCond):
            col = self.resolve_column(cond.col, scope)
            return _Pending("rel", InList(col, tuple(v.value for v in cond.values)), [col], cond.pos)
        if isinstance(cond, IsNullCond):
            col = self.resolve_column(cond.col, scope)
            return _Pending("rel", IsNull(col, cond.negated), [col], cond.pos)
        raise AssertionError(f"unhandled condition {cond!r}")

    def bind_template(self, template: str, output_type: str, scope: _Scope, pos: int) -> SemanticPredicate:
        def resolve(m: re.Match) -> str:
            text = m.group(1).strip()
            qual, dot, name = text.rpartition(".")
            ref = self.resolve_column(ColExpr(qual if dot else None, name, pos), scope)
            return "{" + str(ref) + "}"

        if not placeholders(template):
            raise self.err("SEMANTIC template references no column", pos)
        for p in placeholders(template):
            if not p or p.count(".") > 1:
                raise self.err(f"bad placeholder {{{p}}}", pos)
        resolved = re.sub(r"\{([^{}]*)\}", resolve, template)
        try:
            return SemanticPredicate.from_template(resolved, output_type)
        except ValueError as e:
            raise self.err(str(e), pos) from None

    def resolve_column(self, col: ColExpr, scope: _Scope, extra: dict | None = None) -> ColumnRef:
        if col.qualifier is not None:
            if col.qualifier not in scope.aliases:
                raise self.err(f"unknown table or alias {col.qualifier!r}", col.pos)
            if col.qualifier in scope.ctes:
                cols = scope.ctes[col.qualifier]
                if col.name not in cols:
                    raise self.err(f"unknown column {col.qualifier}.{col.name}", col.pos)
                return cols[col.name]
            table = scope.aliases[col.qualifier]
            if not any(c == col.name for c, _ in self.catalog[table]):
                raise self.err(f"unknown column {col.qualifier}.{col.name}", col.pos)
            return ColumnRef(table, col.name)
        hits: list[ColumnRef] = []
        if extra and col.name in extra:
            hits.append(extra[col.name])
        elif col.name in scope.derived:
            hits.append(scope.derived[col.name])
        else:
            for alias, table in scope.aliases.items():
                if alias in scope.ctes:
                    if col.name in scope.ctes[alias]:
                        hits.append(scope.ctes[alias][col.name])
                elif any(c == col.name for c, _ in self.catalog[table]):
                    hits.append(ColumnRef(table, col.name))
        if not hits:
            raise self.err(f"unknown column {col.name!r}", col.pos)
        if len(set(hits)) > 1:
            raise self.err(f"ambiguous column {col.name!r}", col.pos)
        return hits[0]

    # -- placement of conjuncts --------------------------------------------

    def tree_view(self, root: int) -> PlanTree:
        return PlanTree(root, self.nodes, self.catalog)

    def output_columns(self, nid: int) -> list[ColumnRef]:
        return self.tree_view(nid).output_columns(nid)

    def covers(self, nid: int, cols: list[ColumnRef]) -> bool:
        have = set(self.output_columns(nid))
        return all(c in have for c in cols)

    def lowest_covering(self, body: int, cols) -> int:
        cols = list(cols)
        node = body
        while True:
            n = self.nodes[node]
            nxt = [c for c in n.children if self.covers(c, cols)]
            if not nxt:
                return node
            node = nxt[0]

    def stack_above(self, body: int, target: int, new: int) -> int:
        """Insert ``new`` on top of the filter chain directly above ``target``."""
        tree = self.tree_view(body)
        top = target
        parent = tree.parent(top)
        while parent is not None and self.nodes[parent].kind in (Kind.REL_FILTER, Kind.SEM_FILTER):
            top = parent
            parent = tree.parent(top)
        self.nodes[new].children = [top]
        if parent is None:
            return new
        ch = self.nodes[parent].children
        ch[ch.index(top)] = new
        return body

    def place_filter(self, body: int, p: _Pending) -> int:
        if not self.covers(body, p.columns):
            raise self.err("predicate references columns that are not available", p.pos)
        target = self.lowest_covering(body, p.columns)
        if p.kind == "rel":
            nid = self.add(Kind.REL_FILTER, [], predicate=p.payload)
        else:
            tn = self.nodes[target]
            sj = tn.kind is Kind.INNER_JOIN and not tn.keys and len(p.payload.tables) > 1
            if sj:
                parent = self.tree_view(body).parent(target)
                sj = parent is None or not self.nodes[parent].semantic_join
            nid = self.add(Kind.SEM_FILTER, [], semantic=p.payload, semantic_join=sj)
            if sj:
                # the join predicate stays fused to its join, below any WHERE filters
                return self.stack_above_direct(body, target, nid)
        return self.stack_above(body, target, nid)

    def stack_above_direct(self, body: int, target: int, new: int) -> int:
        parent = self.tree_view(body).parent(target)
        self.nodes[new].children = [target]
        if parent is None:
            return new
        ch = self.nodes[parent].children
        ch[ch.index(target)] = new
        return body


def parse(sql: str, catalog: Catalog) -> PlanTree:
    """Parse and bind ``sql`` into a validated plan tree.

    Every WHERE conjunct becomes its own filter node at the lowest position
    covering its columns; relational filters sit below semantic ones.
    """
    q = parse_syntax(sql)
    binder = _Binder(sql, catalog)
    try:
        root, _ = binder.bind_query(q)
    except PlanError as e:
        raise BindError(str(e), 0, sql) from None
    tree = binder.tree(root)
    problems = validate(tree)
    if problems:
        raise BindError("; ".join(map(str, problems)), 0, sql)
    return tree


# ---------------------------------------------------------------------------
# rendering


def _lit(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, (int, float)):
        return repr(v)
    return "'" + str(v).replace("'", "''") + "'"


def _col(ref: ColumnRef) -> str:
    return ref.column if ref.derived else f"{ref.table}.{ref.column}"


def _template(t: str) -> str:
    return "'" + re.sub(r"\{\$\.([^{}]*)\}", r"{\1}", t).replace("'", "''") + "'"


def _render_pred(p) -> str:
    if isinstance(p, Comparison):
        rhs = _col(p.other) if p.other is not None else _lit(p.value)
        return f"{_col(p.column)} {p.op} {rhs}"
    if isinstance(p, Between):
        return f"{_col(p.column)} BETWEEN {_lit(p.low)} AND {_lit(p.high)}"
    if isinstance(p, InList):
        return f"{_col(p.column)} IN ({', '.join(_lit(v) for v in p.values)})"
    if isinstance(p, IsNull):
        return f"{_col(p.column)} IS {'NOT ' if p.negated else ''}NULL"
    return "(" + " AND ".join(_render_pred(a) for a in p.args) + ")"


def render_sql(tree: PlanTree) -> str:
    """Emit dialect SQL for ``tree``.

    Parser-produced trees round-trip up to node ids. Trees whose filters were
    relocated render to equivalent SQL whose re-parse has filters pushed back
    down. Constructs with no surface form raise :class:`RenderError`.
    """
    root = tree[tree.root]
    if root.kind is Kind.UNION:
        return _render_select(tree, root.children[0]) + "\nUNION ALL\n" + _render_select(tree, root.children[1])
    if root.kind is not Kind.UNION and any(tree[n].kind is Kind.UNION for n in tree.walk()):
        raise RenderError("UNION is only expressible at the top of a query")
    return _render_select(tree, tree.root)


def _render_select(tree: PlanTree, top: int) -> str:
    node = tree[top]
    limit = None
    if node.kind is Kind.LIMIT:
        limit = node.limit
        node = tree[node.children[0]]
    if node.kind is not Kind.PROJECT:
        # a bare body: wrap in SELECT *
        proj_cols = tree.output_columns(node.id)
        body = node.id
    else:
        proj_cols = node.columns
        body = node.children[0]
    sort = None
    if tree[body].kind is Kind.SORT:
        sort = tree[body]
        body = sort.children[0]
    agg = None
    if tree[body].kind is Kind.AGGREGATE:
        agg = tree[body]
        body = agg.children[0]

    filters: list[str] = []
    sps: dict[ColumnRef, PlanNode] = {}
    join_preds: dict[int, list[str]] = {}

    def collect(nid: int) -> None:
        n = tree[nid]
        for c in n.children:
            collect(c)
        if n.kind is Kind.REL_FILTER:
            filters.append(("rel", _render_pred(n.predicate)))
        elif n.kind is Kind.SEM_FILTER:
            text = f"SEMANTIC({_template(n.semantic.template)})"
            child = tree[n.children[0]]
            if n.semantic_join and child.kind is Kind.INNER_JOIN and not child.keys:
                join_preds.setdefault(child.id, []).append(text)
            else:
                filters.append(("sem", text))
        elif n.kind is Kind.SEM_PROJECT:
            sps[derived(n.output)] = n
        elif n.kind in (Kind.PROJECT, Kind.LIMIT, Kind.SORT, Kind.AGGREGATE, Kind.UNION):
            raise RenderError(f"{n.kind} at node {nid} has no surface syntax inside a query body")

    collect(body)
    from_sql = _render_from(tree, _strip_unary(tree, body), join_preds, top=True)

    all_cols = [c for t in _scan_order(tree, body) for c in tree.table_columns(t)]
    items = []
    if agg is None and list(proj_cols) == all_cols:
        items = ["*"]
    else:
        aggs = {a.output: a for a in (agg.aggregates if agg else [])}
        for c in proj_cols:
            if c in sps:
                sp = sps[c]
                func = "SEMANTIC_INT" if sp.semantic.output_type == "integer" else "SEMANTIC_STRING"
                items.append(f"{func}({_template(sp.semantic.template)}) AS {sp.output}")
            elif c in aggs:
                a = aggs[c]
                arg = "*" if a.column is None else _col(a.column)
                items.append(f"{a.func.upper()}({arg}) AS {a.alias}")
            elif c.derived:
                raise RenderError(f"derived column {c} has no producer in the query body")
            else:
                items.append(_col(c))
    missing = set(sps) - set(proj_cols)
    if missing:
        raise RenderError(f"semantic projection output {sorted(map(str, missing))} is not in the SELECT list")

    sql = f"SELECT {', '.join(items)}\nFROM {from_sql}"
    ordered = [t for k, t in filters if k == "rel"] + [t for k, t in filters if k == "sem"]
    if ordered:
        sql += "\nWHERE " + "\n  AND ".join(ordered)
    if agg is not None and agg.group_by:
        sql += "\nGROUP BY " + ", ".join(_col(c) for c in agg.group_by)
    if sort is not None:
        sql += "\nORDER BY " + ", ".join(f"{_col(k.column)}{' DESC' if k.descending else ''}" for k in sort.sort_keys)
    if limit is not None:
        sql += f"\nLIMIT {limit}"
    return sql


def _strip_unary(tree: PlanTree, nid: int) -> int:
    while tree[nid].kind in (Kind.REL_FILTER, Kind.SEM_FILTER, Kind.SEM_PROJECT):
        nid = tree[nid].children[0]
    return nid


def _scan_order(tree: PlanTree, nid: int) -> list[str]:
    return [tree[n].table for n in tree.walk(nid) if tree[n].kind is Kind.TABLE_SCAN]


def _render_from(tree: PlanTree, nid: int, join_preds: dict, top: bool = False) -> str:
    n = tree[nid]
    if n.kind is Kind.TABLE_SCAN:
        return n.table
    if n.kind not in (Kind.INNER_JOIN, Kind.CROSS_JOIN):
        raise RenderError(f"{n.kind} at node {nid} cannot appear inside FROM")
    left = _render_from(tree, _strip_unary(tree, n.children[0]), join_preds)
    right = _render_from(tree, _strip_unary(tree, n.children[1]), join_preds)
    if tree[_strip_unary(tree, n.children[1])].kind is not Kind.TABLE_SCAN:
        right = f"({right})"
    if n.kind is Kind.CROSS_JOIN:
        return f"{left} CROSS JOIN {right}"
    conds = [f"{_col(a)} = {_col(b)}" for a, b in n.keys] + join_preds.get(nid, [])
    if not conds:
        raise RenderError(f"inner join {nid} has no condition")
    return f"{left} JOIN {right} ON {' AND '.join(conds)}"
