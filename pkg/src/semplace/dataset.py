"""Directory-of-CSVs datasets: ``<table>.csv`` plus ``<table>.schema.json``.

The sidecar holds an ordered ``{"column": "type"}`` object. An empty CSV
field is read as NULL, so empty strings cannot be represented.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .executor import Relation
from .plan import COLUMN_TYPES, Catalog, ColumnRef


class DatasetError(ValueError):
    pass


def _parse(text: str, typ: str, where: str):
    if text == "":
        return None
    try:
        if typ == "integer":
            return int(text)
        if typ == "float":
            return float(text)
        if typ == "boolean":
            low = text.lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
            raise ValueError(text)
    except ValueError:
        raise DatasetError(f"{where}: cannot read {text!r} as {typ}") from None
    return text


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_table(csv_path: Path, schema: list[tuple[str, str]], table: str) -> Relation:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{csv_path}: missing header row") from None
        if header != [c for c, _ in schema]:
            raise DatasetError(f"{csv_path}: header {header} does not match schema {[c for c, _ in schema]}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(schema):
                raise DatasetError(f"{csv_path}:{lineno}: expected {len(schema)} fields, got {len(raw)}")
            rows.append(tuple(_parse(v, t, f"{csv_path}:{lineno}") for v, (_, t) in zip(raw, schema)))
    return Relation([(ColumnRef(table, c), t) for c, t in schema], rows)


def load_dataset(directory: str | Path) -> tuple[Catalog, dict[str, Relation]]:
    """Read every ``*.schema.json`` table in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    catalog: Catalog = {}
    data: dict[str, Relation] = {}
    for schema_path in sorted(directory.glob("*.schema.json")):
        table = schema_path.name[: -len(".schema.json")]
        raw = json.loads(schema_path.read_text(encoding="utf-8"))
        schema = [(c, t) for c, t in raw.items()]
        for c, t in schema:
            if t not in COLUMN_TYPES:
                raise DatasetError(f"{schema_path}: column {c!r} has unknown type {t!r}")
        catalog[table] = schema
        data[table] = read_table(directory / f"{table}.csv", schema, table)
    if not catalog:
        raise DatasetError(f"{directory} contains no <table>.schema.json files")
    return catalog, data


def load_catalog(path: str | Path) -> Catalog:
    """A catalog file maps table -> ordered {column: type}, or is a dataset directory."""
    path = Path(path)
    if path.is_dir():
        return load_dataset(path)[0]
    raw = json.loads(path.read_text(encoding="utf-8"))
    return {t: (list(cols.items()) if isinstance(cols, dict) else [tuple(c) for c in cols]) for t, cols in raw.items()}


def write_dataset(directory: str | Path, catalog: Catalog, data: dict[str, Relation]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for table in sorted(catalog):
        schema = catalog[table]
        (directory / f"{table}.schema.json").write_text(
            json.dumps(dict(schema), indent=2) + "\n", encoding="utf-8")
        with open(directory / f"{table}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([c for c, _ in schema])
            for row in data[table].rows:
                w.writerow([_format(v) for v in row])
    return directory


def relation_from_rows(table: str, schema: list[tuple[str, str]], rows) -> Relation:
    rel = Relation([(ColumnRef(table, c), t) for c, t in schema], [tuple(r) for r in rows])
    rel.check()
    return rel


def write_relation_csv(path: str | Path, rel: Relation) -> Path:
    """Write a result relation with ``table.column`` headers; NULL becomes an empty field."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([str(c) for c, _ in rel.schema])
        for row in rel.rows:
            w.writerow([_format(v) for v in row])
    return path
