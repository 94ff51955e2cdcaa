from __future__ import annotations

import filecmp
import json

import pytest

from conftest import scenario
from semplace.dataset import DatasetError, load_dataset, write_dataset
from semplace.executor import execute
from semplace.pipeline import scenario_tree
from semplace.plan import ColumnRef, Kind
from semplace.workloads import (
    PRESETS,
    WorkloadError,
    WorkloadSpec,
    corpus_dataset,
    corpus_queries,
    generate_data,
    generate_workload,
    load_preset,
)


def test_generation_is_byte_identical(tmp_path):
    spec = WorkloadSpec.from_dict(corpus_dataset("shop"))
    a = generate_workload(spec, tmp_path / "a")
    b = generate_workload(spec, tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names and names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []


def test_seed_changes_data():
    raw = corpus_dataset("shop")
    a = generate_data(WorkloadSpec.from_dict(raw))[1]
    b = generate_data(WorkloadSpec.from_dict({**raw, "seed": raw.get("seed", 0) + 1}))[1]
    assert a["reviews"].rows != b["reviews"].rows


def test_empty_table_writes_header_only(tmp_path):
    spec = WorkloadSpec.from_dict({"name": "empty", "tables": {
        "t": {"rows": 0, "columns": {"id": {"gen": "serial"}, "txt": {"gen": "text"}}}}})
    out = generate_workload(spec, tmp_path / "e")
    assert (out / "t.csv").read_text() == "id,txt\n"
    catalog, data = load_dataset(out)
    assert catalog == {"t": [("id", "integer"), ("txt", "text")]}
    assert data["t"].rows == []


def test_csv_round_trip_with_nulls(tmp_path):
    catalog, data = generate_data(WorkloadSpec.from_dict(corpus_dataset("shop")))
    write_dataset(tmp_path / "d", catalog, data)
    cat2, data2 = load_dataset(tmp_path / "d")
    assert cat2 == catalog
    for t in catalog:
        assert data2[t].rows == data[t].rows
    assert any(r[-1] is None for r in data["reviews"].rows)


def test_bad_dataset_inputs(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")
    (tmp_path / "t.schema.json").write_text(json.dumps({"x": "integer"}))
    (tmp_path / "t.csv").write_text("x\nnot-a-number\n")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(WorkloadError):
        generate_data(WorkloadSpec.from_dict({"tables": {"t": {"rows": 3, "columns": {"x": {"gen": "nope"}}}}}))


def test_fig1_preset_shape():
    sc = scenario("fig1")
    assert len(sc.data["books"].rows) == 1000
    assert len(sc.data["reviews"].rows) == 5000
    rating = sc.data["reviews"].index(ColumnRef("reviews", "rating"))
    assert sum(1 for r in sc.data["reviews"].rows if r[rating] >= 3) == 3000
    book = sc.data["reviews"].index(ColumnRef("reviews", "book_id"))
    kept = [r for r in sc.data["reviews"].rows if r[rating] >= 3]
    assert len({r[book] for r in kept if r[book] < 1000}) == 800
    _, m = execute(scenario_tree(sc), sc.data, sc.oracle)
    assert m.llm_calls == 4000


def test_chain5_preset_shape():
    sc = scenario("chain5")
    assert sorted(sc.data) == [f"t{i}" for i in range(1, 6)]
    assert all(len(r.rows) == 1000 for r in sc.data.values())
    tree = scenario_tree(sc)
    assert len(tree.nodes_of(Kind.INNER_JOIN)) == 4
    assert len(tree.nodes_of(Kind.SEM_FILTER)) == 5
    assert sc.oracle.selectivity == pytest.approx(0.1)


def test_every_preset_loads():
    for name in PRESETS:
        assert load_preset(name)["tables"]
    with pytest.raises(WorkloadError):
        load_preset("nope")


def test_corpus_covers_the_grammar():
    names = set(corpus_queries())
    assert {"listing1", "listing2", "semantic_join", "cte", "aggregate", "limit", "union", "cross"} <= names
