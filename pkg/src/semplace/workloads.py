"""Synthetic workloads: declarative dataset specs and random plan instances.

A dataset spec lists tables with a row count and one generator per column.
Generators are deterministic given the spec seed::

    {"gen": "serial", "start": 0}                    start, start+1, ...
    {"gen": "cycle", "start": 3, "modulus": 3}       start + i % modulus
    {"gen": "uniform", "low": 1, "high": 5}          seeded integers in [low, high]
    {"gen": "text", "distinct": 100}                 "<table>.<col> #<i % distinct>"
    {"gen": "segments", "parts": [{"count": n, ...}, ...]}

Any generator may add ``"nulls": fraction`` (seeded) and ``"type"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .executor import Relation
from .plan import (
    Between,
    ColumnRef,
    Comparison,
    IsNull,
    Kind,
    PlanTree,
    TreeBuilder,
)


class WorkloadError(ValueError):
    pass


# ---------------------------------------------------------------------------
# declarative datasets


@dataclass
class WorkloadSpec:
    name: str
    tables: dict[str, dict]
    seed: int = 0
    query: str | None = None
    oracle: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> WorkloadSpec:
        known = {"name", "tables", "seed", "query", "oracle"}
        return cls(
            name=d.get("name", "workload"),
            tables=d["tables"],
            seed=int(d.get("seed", 0)),
            query=d.get("query"),
            oracle=dict(d.get("oracle", {})),
            options={k: v for k, v in d.items() if k not in known},
        )

    @classmethod
    def load(cls, path: str | Path) -> WorkloadSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def catalog(self) -> dict[str, list[tuple[str, str]]]:
        return {t: [(c, g.get("type", _default_type(g))) for c, g in spec["columns"].items()]
                for t, spec in self.tables.items()}


def _default_type(g: dict) -> str:
    kind = g.get("gen")
    if kind == "segments":
        return _default_type(g["parts"][0])
    return "text" if kind == "text" else "integer"


def _column(table: str, col: str, g: dict, rows: int, rng: np.random.Generator) -> list:
    kind = g.get("gen")
    idx = np.arange(rows)
    if kind == "serial":
        vals = (int(g.get("start", 0)) + idx).tolist()
    elif kind == "cycle":
        m = int(g["modulus"])
        if m < 1:
            raise WorkloadError(f"{table}.{col}: modulus must be positive")
        vals = (int(g.get("start", 0)) + idx % m).tolist()
    elif kind == "uniform":
        lo, hi = int(g["low"]), int(g["high"])
        if hi < lo:
            raise WorkloadError(f"{table}.{col}: empty range")
        vals = rng.integers(lo, hi + 1, size=rows).tolist()
    elif kind == "text":
        d = int(g.get("distinct", rows or 1))
        if d < 1:
            raise WorkloadError(f"{table}.{col}: distinct must be positive")
        prefix = g.get("prefix", f"{table}.{col}")
        vals = [f"{prefix} #{i % d}" for i in range(rows)]
    elif kind == "segments":
        vals = []
        for part in g["parts"]:
            n = int(part["count"])
            vals.extend(_column(table, col, part, n, rng))
        if len(vals) != rows:
            raise WorkloadError(f"{table}.{col}: segments cover {len(vals)} rows, table has {rows}")
    else:
        raise WorkloadError(f"{table}.{col}: unknown generator {kind!r}")
    nulls = float(g.get("nulls", 0.0))
    if nulls > 0:
        mask = rng.random(rows) < nulls
        vals = [None if m else v for v, m in zip(vals, mask)]
    return vals


def generate_data(spec: WorkloadSpec) -> tuple[dict, dict[str, Relation]]:
    """Materialise a spec into a catalog and relations. Pure in (spec, seed)."""
    rng = np.random.default_rng(spec.seed)
    catalog = spec.catalog()
    data: dict[str, Relation] = {}
    for table in sorted(spec.tables):
        tspec = spec.tables[table]
        rows = int(tspec["rows"])
        if rows < 0:
            raise WorkloadError(f"{table}: negative row count")
        cols = [_column(table, c, g, rows, rng) for c, g in tspec["columns"].items()]
        data[table] = Relation([(ColumnRef(table, c), t) for c, t in catalog[table]], list(zip(*cols)) if cols else [])
        data[table].check()
    return catalog, data


def generate_workload(spec: WorkloadSpec, out_dir: str | Path) -> Path:
    """Write the spec's dataset as a directory of CSVs with schema sidecars."""
    from .dataset import write_dataset

    catalog, data = generate_data(spec)
    return write_dataset(out_dir, catalog, data)


# ---------------------------------------------------------------------------
# presets shipped with the package


PRESETS = ("fig1", "chain5", "alpha-sweep", "sel-grid", "overhead")


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise WorkloadError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("semplace.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def _corpus() -> dict:
    d = resources.files("semplace.presets").joinpath("corpus.json").read_text(encoding="utf-8")
    return json.loads(d)


def corpus_queries() -> dict[str, tuple[str, str]]:
    """Named ``(sql, dataset)`` pairs used by the semantics and fuzz suites."""
    return {k: (v["sql"], v["dataset"]) for k, v in _corpus()["queries"].items()}


def corpus_dataset(name: str) -> dict:
    """Workload dict for a corpus dataset: one of the corpus's own or a preset."""
    own = _corpus()["datasets"]
    if name in own:
        return own[name]
    return load_preset(name)


# ---------------------------------------------------------------------------
# random instances for property tests


RANDOM_SCHEMA = [("id", "integer"), ("k", "integer"), ("v", "integer"), ("txt", "text")]


@dataclass
class RandomInstance:
    tree: PlanTree
    data: dict[str, Relation] | None
    table_rows: dict[str, int]


def random_catalog(n_tables: int) -> dict[str, list[tuple[str, str]]]:
    return {f"t{i}": list(RANDOM_SCHEMA) for i in range(n_tables)}


def random_data(catalog, rng: np.random.Generator, max_rows: int = 6) -> dict[str, Relation]:
    """Tiny tables with duplicate keys, duplicate texts and nulls."""
    data = {}
    for t in catalog:
        rows = int(rng.integers(0, max_rows + 1))
        out = []
        for r in range(rows):
            k = None if rng.random() < 0.15 else int(rng.integers(0, 3))
            v = int(rng.integers(0, 4))
            txt = None if rng.random() < 0.2 else f"w{int(rng.integers(0, 3))}"
            out.append((r, k, v, txt))
        data[t] = Relation([(ColumnRef(t, c), ty) for c, ty in catalog[t]], out)
    return data


def random_instance(rng: np.random.Generator, *, max_filters: int = 6, max_nodes: int = 12,
                    with_data: bool = True, allow_blocks: bool = True) -> RandomInstance:
    """A random hybrid plan within the given size budget.

    Semantic filters reference one or two tables; each sits above a random
    node covering its tables. Templates are unique per filter.
    """
    n_filters = int(rng.integers(0, max_filters + 1))
    budget = max_nodes - n_filters - 1  # root Project
    n_tables = int(rng.integers(1, 4))
    while n_tables > 1 and 2 * n_tables - 1 > budget:
        n_tables -= 1
    if budget < 1:
        n_filters = max(0, max_nodes - 2)
        budget = max_nodes - n_filters - 1
        n_tables = 1
    catalog = random_catalog(n_tables)
    b = TreeBuilder(catalog)
    parts = [b.scan(t) for t in catalog]
    used = n_tables
    while len(parts) > 1:
        i = int(rng.integers(0, len(parts) - 1))
        left, right = parts[i], parts.pop(i + 1)
        lt = sorted(_tables(b, left))
        rt = sorted(_tables(b, right))
        if rng.random() < 0.7:
            la, ra = rng.choice(lt), rng.choice(rt)
            node = b.join(left, right, [(ColumnRef(la, "k"), ColumnRef(ra, "k"))])
        else:
            node = b.cross(left, right)
        parts[i] = node
        used += 1
    top = parts[0]
    # sprinkle unary relational operators
    extras = budget - used
    for _ in range(max(0, extras)):
        nodes = _all_nodes(b, top)
        target = nodes[int(rng.integers(0, len(nodes)))]
        tables = sorted(_tables(b, target))
        t = rng.choice(tables)
        r = rng.random()
        if r < 0.5:
            pred = [
                Comparison(ColumnRef(t, "v"), ">=", int(rng.integers(0, 3))),
                Between(ColumnRef(t, "v"), 1, 3),
                IsNull(ColumnRef(t, "k"), negated=True),
            ][int(rng.integers(0, 3))]
            new = b.filter(target, pred)
        elif r < 0.75:
            # ancestors may read any column, so the projection only reorders
            cols = _visible(b, target)
            new = b.project(target, [cols[i] for i in rng.permutation(len(cols))])
        elif allow_blocks and r < 0.9:
            new = b.limit(target, int(rng.integers(1, 6)))
        elif allow_blocks:
            from .plan import SortKey

            new = b.sort(target, [SortKey(ColumnRef(t, "v"))])
        else:
            new = b.filter(target, Comparison(ColumnRef(t, "v"), "!=", int(rng.integers(0, 4))))
        top = _splice(b, top, target, new)
    for j in range(n_filters):
        nodes = _all_nodes(b, top)
        target = nodes[int(rng.integers(0, len(nodes)))]
        tables = sorted(_tables(b, target))
        if len(tables) > 1 and rng.random() < 0.35:
            pick = list(rng.choice(tables, size=2, replace=False))
        else:
            pick = [rng.choice(tables)]
        cols = _visible(b, target)
        refs = [c for c in cols if c.table in pick and c.column in ("txt", "v")]
        if not refs:
            refs = [c for c in cols if c.table in pick][:1]
        template = f"f{j}: " + " / ".join("{" + str(c) + "}" for c in sorted(set(refs)))
        new = b.sem_filter(target, template)
        top = _splice(b, top, target, new)
    root_cols = _visible(b, top)
    root = b.project(top, root_cols)
    tree = b.build(root)
    data = random_data(catalog, rng) if with_data else None
    rows = {t: (len(data[t].rows) if data else int(rng.integers(1, 2000))) for t in catalog}
    return RandomInstance(tree, data, rows)


def _tables(b: TreeBuilder, nid: int) -> set[str]:
    n = b.nodes[nid]
    if n.kind is Kind.TABLE_SCAN:
        return {n.table}
    return set().union(*(_tables(b, c) for c in n.children))


def _all_nodes(b: TreeBuilder, top: int) -> list[int]:
    out = [top]
    for c in b.nodes[top].children:
        out.extend(_all_nodes(b, c))
    return out


def _visible(b: TreeBuilder, nid: int) -> list[ColumnRef]:
    t = PlanTree(nid, b.nodes, b.catalog)
    return t.output_columns(nid)


def _splice(b: TreeBuilder, top: int, target: int, new: int) -> int:
    """``new`` already has ``target`` as child; hook it into target's old parent."""
    if target == top:
        return new
    for n in b.nodes.values():
        if n.id != new and target in n.children:
            n.children[n.children.index(target)] = new
            break
    return top


def instance_stats(inst: RandomInstance):
    from .cost import Stats

    return Stats(table_rows=dict(inst.table_rows))


__all__ = [
    "PRESETS",
    "RandomInstance",
    "WorkloadError",
    "WorkloadSpec",
    "corpus_dataset",
    "corpus_queries",
    "generate_data",
    "generate_workload",
    "load_preset",
    "random_instance",
]
