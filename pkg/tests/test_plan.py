from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import LISTING1, rel, rng
from semplace.executor import execute
from semplace.oracle import MockOracle, mock_oracle_eval
from semplace.plan import (
    AggregateCall,
    ColumnRef,
    Comparison,
    Kind,
    PlanTree,
    TreeBuilder,
    is_block_operator,
    tables_under,
    validate,
)
from semplace.pullup import legal_positions
from semplace.sql import parse
from semplace.workloads import random_instance


def test_listing1_plan_is_valid(catalog):
    tree = parse(LISTING1, catalog)
    assert validate(tree) == []
    kinds = sorted(n.kind.value for n in tree.nodes.values())
    assert kinds.count("SemFilter") == 2
    assert kinds.count("InnerJoin") == 1
    assert kinds.count("RelFilter") == 1
    assert kinds.count("TableScan") == 2


def test_single_scan_is_valid(catalog):
    b = TreeBuilder(catalog)
    assert validate(b.build(b.scan("books"))) == []


def test_join_with_one_child_names_arity(catalog):
    tree = parse(LISTING1, catalog)
    join = tree.nodes_of(Kind.INNER_JOIN)[0]
    tree[join].children.pop()
    tree.invalidate()
    problems = validate(tree)
    assert len(problems) == 1
    assert problems[0].node == join
    assert "children" in problems[0].message


def test_validate_reports_cycle_and_unreachable(catalog):
    b = TreeBuilder(catalog)
    s = b.scan("books")
    f = b.filter(s, Comparison(ColumnRef("books", "book_id"), ">", 1))
    tree = b.build(f)
    tree[s].kind = Kind.REL_FILTER
    tree[s].predicate = tree[f].predicate
    tree[s].children = [f]
    tree.invalidate()
    assert validate(tree)


def test_tables_under_fig1(catalog):
    tree = parse(LISTING1, catalog)
    join = tree.nodes_of(Kind.INNER_JOIN)[0]
    assert tables_under(tree, join) == {"books", "reviews"}
    scan = [n for n in tree.nodes_of(Kind.TABLE_SCAN) if tree[n].table == "books"][0]
    assert tables_under(tree, scan) == {"books"}


def test_tables_under_three_table_chain(catalog):
    b = TreeBuilder(catalog)
    j1 = b.join(b.scan("books"), b.scan("reviews"), [(ColumnRef("books", "book_id"), ColumnRef("reviews", "book_id"))])
    j2 = b.join(j1, b.scan("authors"), [(ColumnRef("books", "author_id"), ColumnRef("authors", "author_id"))])
    tree = b.build(j2)
    scans = {tree[n].table for n in tree.walk() if tree[n].kind is Kind.TABLE_SCAN}
    assert tables_under(tree, j2) == scans == {"books", "reviews", "authors"}


@given(st.integers(0, 10_000))
def test_tables_under_monotone(seed):
    tree = random_instance(rng(seed), with_data=False).tree
    for nid in tree.walk():
        p = tree.parent(nid)
        if p is not None:
            assert tables_under(tree, nid) <= tables_under(tree, p)


def test_tables_under_tracks_mutation(catalog):
    tree = parse(LISTING1, catalog)
    sf = [f for f in tree.nodes_of(Kind.SEM_FILTER) if "description" in tree[f].semantic.template][0]
    join = tree.nodes_of(Kind.INNER_JOIN)[0]
    assert tables_under(tree, sf) == {"books"}
    tree.swap_with_parent(sf)
    assert tables_under(tree, sf) == {"books", "reviews"}
    assert validate(tree) == []
    assert tree.parent(join) == sf


@pytest.mark.parametrize("kind,expected", [
    (Kind.LIMIT, True), (Kind.UNION, True), (Kind.AGGREGATE, True), (Kind.SORT, True),
    (Kind.REL_FILTER, False), (Kind.PROJECT, False), (Kind.INNER_JOIN, False),
    (Kind.CROSS_JOIN, False), ("Limit", True),
])
def test_is_block_operator(kind, expected):
    assert is_block_operator(kind) is expected


def test_aggregate_counterexample_on_three_rows():
    """Grouping collapses the rows an SF would judge, so its position changes the answer."""
    schema = [("g", "integer"), ("txt", "text")]
    catalog = {"t": schema}
    data = {"t": rel("t", schema, [(1, "a"), (1, "b"), (2, "c")])}
    oracle = MockOracle(seed=0, selectivity=0.5)
    b = TreeBuilder(catalog)
    below = b.sem_filter(b.scan("t"), "{t.txt} ok?")
    agg = b.aggregate(below, [ColumnRef("t", "g")], [AggregateCall("count", None, "n")])
    tree = b.build(agg)
    assert legal_positions(tree, below) == [tree[below].children[0]]

    b2 = TreeBuilder(catalog)
    agg2 = b2.aggregate(b2.scan("t"), [ColumnRef("t", "g")], [AggregateCall("count", None, "n")])
    tree2 = b2.build(agg2)
    got, _ = execute(tree, data, oracle)
    bare, _ = execute(tree2, data, oracle)
    decisions = [mock_oracle_eval(f"{t} ok?", 0, 0.5) for t in ("a", "b", "c")]
    want = {}
    for (g, _), keep in zip(data["t"].rows, decisions):
        if keep:
            want[g] = want.get(g, 0) + 1
    assert sorted(got.rows) == sorted(want.items())
    # without the filter below, the per-group counts are the raw ones
    assert sorted(bare.rows) == [(1, 2), (2, 1)]
    assert sorted(got.rows) != sorted(bare.rows)


@given(st.integers(0, 10_000))
def test_json_round_trip_is_byte_identical(seed):
    tree = random_instance(rng(seed), with_data=False).tree
    text = tree.to_json()
    again = PlanTree.from_json(text)
    assert again.to_json() == text
    assert validate(again) == []


def test_json_round_trip_listing1(catalog):
    tree = parse(LISTING1, catalog)
    assert PlanTree.from_json(tree.to_json()).to_json() == tree.to_json()
    assert json.loads(tree.to_json())["root"] == tree.root


@given(st.integers(0, 10_000))
def test_mutations_keep_tree_valid(seed):
    inst = random_instance(rng(seed), with_data=False)
    tree = inst.tree
    for f in tree.nodes_of(Kind.SEM_FILTER):
        p = tree.parent(f)
        if p is not None and tree[p].kind is not Kind.SEM_FILTER and p != tree.root:
            if len(legal_positions(tree, f)) > 1:
                tree.swap_with_parent(f)
                assert validate(tree) == []


def test_column_ref_requires_names():
    with pytest.raises(ValueError):
        ColumnRef("", "x")
    with pytest.raises(ValueError):
        ColumnRef.parse("nodot")


def test_unknown_table_is_a_violation(catalog):
    b = TreeBuilder(catalog)
    problems = validate(b.build(b.scan("nope")))
    assert [p.node for p in problems] == [0]
    assert "unknown table" in problems[0].message
