"""In-memory execution of hybrid plans with a prompt-keyed function cache."""

from __future__ import annotations

import threading
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from .oracle import OracleError, SemanticOracle
from .plan import (
    And,
    Between,
    ColumnRef,
    Comparison,
    InList,
    IsNull,
    PlanNode,
    PlanTree,
    SemanticPredicate,
    derived,
)

BATCH_SIZE = 1024

_PY_TYPES = {
    "integer": (int,),
    "float": (int, float),
    "text": (str,),
    "boolean": (bool,),
}


class ExecutionError(RuntimeError):
    """Execution aborted; ``metrics`` holds what was counted so far."""

    def __init__(self, message: str, metrics: ExecutionMetrics | None = None):
        super().__init__(message)
        self.metrics = metrics


@dataclass
class Relation:
    """Column-typed multiset of rows. Values may be ``None``."""

    schema: list[tuple[ColumnRef, str]]
    rows: list[tuple]

    @property
    def columns(self) -> list[ColumnRef]:
        return [c for c, _ in self.schema]

    def index(self, ref: ColumnRef) -> int:
        for i, (c, _) in enumerate(self.schema):
            if c == ref:
                return i
        raise KeyError(f"column {ref} not in relation")

    def check(self) -> None:
        width = len(self.schema)
        for r, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {r} has {len(row)} values, schema has {width}")
            for (col, typ), v in zip(self.schema, row):
                if v is None:
                    continue
                ok = isinstance(v, _PY_TYPES[typ]) and not (typ != "boolean" and isinstance(v, bool))
                if not ok:
                    raise ValueError(f"row {r}: value {v!r} is not {typ} for column {col}")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class ExecutionMetrics:
    llm_calls: int = 0
    cache_hits: int = 0
    cache_probes: int = 0
    rows_per_node: dict[int, int] = field(default_factory=dict)
    calls_per_node: dict[int, int] = field(default_factory=dict)
    probes_per_node: dict[int, int] = field(default_factory=dict)
    warnings: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "llm_calls": self.llm_calls,
            "cache_hits": self.cache_hits,
            "cache_probes": self.cache_probes,
            "rows_per_node": {str(k): v for k, v in sorted(self.rows_per_node.items())},
            "calls_per_node": {str(k): v for k, v in sorted(self.calls_per_node.items())},
            "warnings": self.warnings,
        }


class FunctionCache:
    """Memo of oracle answers keyed on the rendered prompt.

    Keys are hashed into lock buckets; within a bucket the first caller
    computes and every later caller sees the stored value, so each distinct
    key costs exactly one miss even under concurrent access.
    """

    def __init__(self, buckets: int = 64):
        self._entries: dict[tuple[str, str], Any] = {}
        self._locks = [threading.Lock() for _ in range(buckets)]
        self._stats_lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def get_or_compute(self, key: tuple[str, str], compute: Callable[[], Any]) -> tuple[Any, bool]:
        """Return ``(value, was_miss)``."""
        lock = self._locks[hash(key) % len(self._locks)]
        with lock:
            if key in self._entries:
                value, miss = self._entries[key], False
            else:
                value = compute()
                self._entries[key] = value
                miss = True
        with self._stats_lock:
            if miss:
                self.misses += 1
            else:
                self.hits += 1
        return value, miss

    def clear(self) -> None:
        self._entries.clear()
        self.hits = self.misses = 0


# ---------------------------------------------------------------------------
# prompts and parsing


class _NullMarker:
    def __repr__(self) -> str:
        return "NULL_PROMPT"


NULL_PROMPT = _NullMarker()


def canonical_text(value: Any) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_prompt(predicate: SemanticPredicate, values: dict[ColumnRef, Any]) -> str | _NullMarker:
    """Substitute placeholder values; all-null inputs yield :data:`NULL_PROMPT`."""
    refs = predicate.referenced_columns
    if all(values[r] is None for r in refs):
        return NULL_PROMPT
    out = predicate.template
    for r in refs:
        out = out.replace("{" + str(r) + "}", canonical_text(values[r]))
    return out


def parse_answer(text: Any, output_type: str) -> tuple[Any, bool]:
    """Parse raw oracle text into a typed value; returns ``(value, ok)``."""
    if output_type == "boolean":
        if isinstance(text, bool):
            return text, True
        t = str(text).strip().lower().rstrip(".")
        if t in ("yes", "true", "1"):
            return True, True
        if t in ("no", "false", "0"):
            return False, True
        return None, False
    if output_type == "integer":
        t = str(text).strip()
        if t.isdigit() and t.isascii():
            return int(t), True
        return None, False
    return str(text), True


# ---------------------------------------------------------------------------
# relational predicates (SQL three-valued logic: unknown drops the row)

_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def _compile(pred, rel: Relation) -> Callable[[tuple], bool]:
    if isinstance(pred, Comparison):
        i = rel.index(pred.column)
        f = _CMP[pred.op]
        if pred.other is not None:
            j = rel.index(pred.other)
            return lambda r: r[i] is not None and r[j] is not None and f(r[i], r[j])
        v = pred.value
        if v is None:
            return lambda r: False
        return lambda r: r[i] is not None and f(r[i], v)
    if isinstance(pred, Between):
        i = rel.index(pred.column)
        lo, hi = pred.low, pred.high
        return lambda r: r[i] is not None and lo <= r[i] <= hi
    if isinstance(pred, InList):
        i = rel.index(pred.column)
        vals = [v for v in pred.values if v is not None]
        return lambda r: r[i] is not None and r[i] in vals
    if isinstance(pred, IsNull):
        i = rel.index(pred.column)
        if pred.negated:
            return lambda r: r[i] is not None
        return lambda r: r[i] is None
    if isinstance(pred, And):
        parts = [_compile(a, rel) for a in pred.args]
        return lambda r: all(p(r) for p in parts)
    raise TypeError(f"unknown predicate {pred!r}")


# ---------------------------------------------------------------------------
# execution


class _Run:
    def __init__(self, tree, data, oracle, cache, metrics, batch_size, workers):
        self.tree = tree
        self.data = data
        self.oracle = oracle
        self.cache = cache
        self.m = metrics
        self.batch_size = batch_size
        self.workers = workers
        self.pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        self.lock = threading.Lock()

    def eval(self, nid: int) -> Relation:
        n = self.tree[nid]
        handler = getattr(self, "_" + n.kind.name.lower())
        inputs = [self.eval(c) for c in n.children]
        try:
            rel = handler(n, inputs)
        except TypeError as e:
            # e.g. comparing text with an integer literal
            raise ExecutionError(f"node {nid} ({n.kind.value}): {e}", self.m) from e
        self.m.rows_per_node[nid] = len(rel.rows)
        return rel

    def _table_scan(self, n: PlanNode, _) -> Relation:
        if n.table not in self.data:
            raise ExecutionError(f"no data for table {n.table!r}", self.m)
        rel = self.data[n.table]
        want = [(ColumnRef(n.table, c), t) for c, t in self.tree.catalog[n.table]]
        if rel.schema != want:
            raise ExecutionError(f"data schema for {n.table!r} does not match the catalog", self.m)
        return rel

    def _rel_filter(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        f = _compile(n.predicate, rel)
        return Relation(rel.schema, [r for r in rel.rows if f(r)])

    def _project(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        idx = [rel.index(c) for c in n.columns]
        return Relation([rel.schema[i] for i in idx], [tuple(r[i] for i in idx) for r in rel.rows])

    def _inner_join(self, n: PlanNode, ins) -> Relation:
        left, right = ins
        schema = left.schema + right.schema
        if not n.keys:
            return Relation(schema, [a + b for a in left.rows for b in right.rows])
        li = [left.index(a) for a, _ in n.keys]
        ri = [right.index(b) for _, b in n.keys]
        table: dict[tuple, list[tuple]] = defaultdict(list)
        for b in right.rows:
            k = tuple(b[i] for i in ri)
            if None not in k:
                table[k].append(b)
        rows = []
        for a in left.rows:
            k = tuple(a[i] for i in li)
            if None in k:
                continue
            for b in table.get(k, ()):
                rows.append(a + b)
        return Relation(schema, rows)

    def _cross_join(self, n: PlanNode, ins) -> Relation:
        left, right = ins
        return Relation(left.schema + right.schema, [a + b for a in left.rows for b in right.rows])

    def _union(self, n: PlanNode, ins) -> Relation:
        left, right = ins
        return Relation(left.schema, left.rows + right.rows)

    def _limit(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        return Relation(rel.schema, rel.rows[: n.limit])

    def _sort(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        rows = list(rel.rows)
        for key in reversed(n.sort_keys):
            i = rel.index(key.column)
            # nulls sort last in either direction
            present = [r for r in rows if r[i] is not None]
            missing = [r for r in rows if r[i] is None]
            present.sort(key=lambda r: r[i], reverse=key.descending)
            rows = present + missing
        return Relation(rel.schema, rows)

    def _aggregate(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        gi = [rel.index(c) for c in n.group_by]
        groups: dict[tuple, list[tuple]] = {}
        for r in rel.rows:
            groups.setdefault(tuple(r[i] for i in gi), []).append(r)
        if not n.group_by and not groups:
            groups[()] = []
        schema = [rel.schema[i] for i in gi]
        for a in n.aggregates:
            if a.func == "count":
                typ = "integer"
            elif a.func == "avg":
                typ = "float"
            else:
                typ = dict(rel.schema)[a.column]
            schema.append((a.output, typ))
        out = []
        for key, rows in groups.items():
            vals = list(key)
            for a in n.aggregates:
                if a.column is None:
                    vals.append(len(rows))
                    continue
                i = rel.index(a.column)
                xs = [r[i] for r in rows if r[i] is not None]
                if a.func == "count":
                    vals.append(len(xs))
                elif not xs:
                    vals.append(None)
                elif a.func == "sum":
                    vals.append(sum(xs))
                elif a.func == "min":
                    vals.append(min(xs))
                elif a.func == "max":
                    vals.append(max(xs))
                else:
                    vals.append(sum(xs) / len(xs))
            out.append(tuple(vals))
        return Relation(schema, out)

    def _ask(self, n: PlanNode, prompt: str) -> Any:
        pred = n.semantic
        key = (pred.output_type, prompt)

        def compute():
            try:
                raw = self.oracle(prompt, pred.output_type, pred.template)
            except OracleError as e:
                raise ExecutionError(str(e), self.m) from e
            value, ok = parse_answer(raw, pred.output_type)
            if not ok:
                with self.lock:
                    self.m.warnings += 1
            return value

        value, miss = self.cache.get_or_compute(key, compute)
        with self.lock:
            self.m.cache_probes += 1
            self.m.probes_per_node[n.id] = self.m.probes_per_node.get(n.id, 0) + 1
            if miss:
                self.m.llm_calls += 1
                self.m.calls_per_node[n.id] = self.m.calls_per_node.get(n.id, 0) + 1
            else:
                self.m.cache_hits += 1
        return value

    def _semantic_values(self, n: PlanNode, rel: Relation) -> list[Any]:
        refs = n.semantic.referenced_columns
        idx = [rel.index(r) for r in refs]
        results: list[Any] = []
        self.m.calls_per_node.setdefault(n.id, 0)
        for start in range(0, len(rel.rows), self.batch_size):
            batch = rel.rows[start : start + self.batch_size]
            prompts = [render_prompt(n.semantic, {r: row[i] for r, i in zip(refs, idx)}) for row in batch]

            def one(p):
                return None if p is NULL_PROMPT else self._ask(n, p)

            if self.pool is not None:
                results.extend(self.pool.map(one, prompts))
            else:
                results.extend(one(p) for p in prompts)
        return results

    def _sem_filter(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        verdicts = self._semantic_values(n, rel)
        return Relation(rel.schema, [r for r, v in zip(rel.rows, verdicts) if v is True])

    def _sem_project(self, n: PlanNode, ins) -> Relation:
        (rel,) = ins
        values = self._semantic_values(n, rel)
        schema = rel.schema + [(derived(n.output), n.semantic.output_type)]
        return Relation(schema, [r + (v,) for r, v in zip(rel.rows, values)])


def execute(
    tree: PlanTree,
    data: dict[str, Relation],
    oracle: SemanticOracle,
    cache: FunctionCache | None = None,
    *,
    batch_size: int = BATCH_SIZE,
    workers: int = 1,
) -> tuple[Relation, ExecutionMetrics]:
    """Evaluate ``tree`` bottom-up.

    The cache is scoped to one query: a passed-in cache is cleared first and
    left filled afterwards for inspection. Semantic filters keep a row only on an explicit true
    answer; rows whose referenced values are all null cost no call and are
    dropped. ``workers > 1`` evaluates prompts of a batch concurrently.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    cache = cache if cache is not None else FunctionCache()
    cache.clear()
    metrics = ExecutionMetrics()
    run = _Run(tree, data, oracle, cache, metrics, batch_size, workers)
    start = time.perf_counter()
    try:
        result = run.eval(tree.root)
    finally:
        if run.pool is not None:
            run.pool.shutdown()
        metrics.wall_time = time.perf_counter() - start
    return result, metrics


# ---------------------------------------------------------------------------
# comparison


@dataclass
class CompareReport:
    equal: bool
    precision: float
    recall: float
    f1: float
    rows_a: int
    rows_b: int
    metrics_a: ExecutionMetrics
    metrics_b: ExecutionMetrics

    def to_dict(self) -> dict:
        return {
            "equal": self.equal,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "rows_a": self.rows_a,
            "rows_b": self.rows_b,
        }


def normalized_multiset(rel: Relation) -> Counter:
    """Rows as a multiset with columns in a canonical (sorted-name) order."""
    order = sorted(range(len(rel.schema)), key=lambda i: str(rel.schema[i][0]))
    names = tuple(str(rel.schema[i][0]) for i in order)
    return Counter((names, tuple(r[i] for i in order)) for r in rel.rows)


def multiset_f1(reference: Relation, candidate: Relation) -> tuple[float, float, float]:
    """Precision, recall and F1 of ``candidate`` against ``reference``."""
    a, b = normalized_multiset(reference), normalized_multiset(candidate)
    tp = sum((a & b).values())
    na, nb = sum(a.values()), sum(b.values())
    if na == 0 and nb == 0:
        return 1.0, 1.0, 1.0
    precision = tp / nb if nb else 0.0
    recall = tp / na if na else 0.0
    f1 = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def run_and_compare(tree_a: PlanTree, tree_b: PlanTree, data: dict[str, Relation], oracle: SemanticOracle,
                    **kwargs) -> CompareReport:
    """Execute both plans with separate caches and compare result multisets."""
    ra, ma = execute(tree_a, data, oracle, **kwargs)
    rb, mb = execute(tree_b, data, oracle, **kwargs)
    equal = normalized_multiset(ra) == normalized_multiset(rb)
    p, r, f1 = (1.0, 1.0, 1.0) if equal else multiset_f1(ra, rb)
    return CompareReport(equal, p, r, f1, len(ra), len(rb), ma, mb)
