from __future__ import annotations

import threading
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rel, rng, scenario
from semplace.executor import (
    ExecutionError,
    FunctionCache,
    canonical_text,
    execute,
    multiset_f1,
    normalized_multiset,
    parse_answer,
    render_prompt,
    run_and_compare,
)
from semplace.oracle import MockOracle, mock_oracle_eval
from semplace.plan import ColumnRef, Comparison, SemanticPredicate, TreeBuilder
from semplace.pipeline import scenario_tree
from semplace.pullup import pull_up_all
from semplace.workloads import random_instance

BOOK = [("book_id", "integer"), ("description", "text")]
REVIEW = [("book_id", "integer"), ("text", "text")]


@pytest.fixture(scope="module")
def fig1_tree():
    return scenario_tree(scenario("fig1"))


def test_fig1_push_down_counts_4000(fig1_tree):
    sc = scenario("fig1")
    _, m = execute(fig1_tree, sc.data, sc.oracle)
    assert m.llm_calls == 4000
    assert sorted(m.calls_per_node.values()) == [1000, 3000]


def test_fig1_pull_up_counts_3300(fig1_tree):
    sc = scenario("fig1")
    _, m = execute(pull_up_all(fig1_tree).tree, sc.data, sc.oracle)
    assert m.llm_calls == 3300
    assert sorted(m.calls_per_node.values()) == [800, 2500]


def _join_tree(catalog, template="{books.description} is about AI?"):
    b = TreeBuilder(catalog)
    j = b.join(b.scan("books"), b.scan("reviews"), [(ColumnRef("books", "book_id"), ColumnRef("reviews", "book_id"))])
    return b.build(b.sem_filter(j, template))


def test_same_prompt_in_ten_rows_is_one_call():
    catalog = {"books": BOOK, "reviews": REVIEW}
    data = {"books": rel("books", BOOK, [(1, "deep learning")]),
            "reviews": rel("reviews", REVIEW, [(1, f"r{i}") for i in range(10)])}
    _, m = execute(_join_tree(catalog), data, MockOracle(selectivity=1.0))
    assert (m.llm_calls, m.cache_hits, m.cache_probes) == (1, 9, 10)


def test_render_prompt():
    pred = SemanticPredicate("{books.description} is about AI?", (ColumnRef("books", "description"),))
    assert render_prompt(pred, {ColumnRef("books", "description"): "A book on robots"}) == \
        "A book on robots is about AI?"
    assert not isinstance(render_prompt(pred, {ColumnRef("books", "description"): None}), str)
    two = SemanticPredicate("{a.x} vs {a.y}", (ColumnRef("a", "x"), ColumnRef("a", "y")))
    assert render_prompt(two, {ColumnRef("a", "x"): 3, ColumnRef("a", "y"): None}) == "3 vs NULL"
    assert canonical_text(3) == "3" and canonical_text(True) == "true" and canonical_text(0.5) == "0.5"


def test_null_inputs_are_dropped_without_calls():
    catalog = {"reviews": REVIEW}
    data = {"reviews": rel("reviews", REVIEW, [(1, None), (2, "x"), (3, None)])}
    b = TreeBuilder(catalog)
    tree = b.build(b.sem_filter(b.scan("reviews"), "{reviews.text} ok?"))
    out, m = execute(tree, data, MockOracle(selectivity=1.0))
    assert out.rows == [(2, "x")]
    assert m.llm_calls == 1


def test_parse_answer_rules():
    assert parse_answer("YES", "boolean") == (True, True)
    assert parse_answer(" no. ", "boolean") == (False, True)
    assert parse_answer("maybe", "boolean") == (None, False)
    assert parse_answer("4", "integer") == (4, True)
    for bad in ("4.0", "-3", " four", "٣"):
        assert parse_answer(bad, "integer") == (None, False)


def test_unparseable_integer_counts_a_warning():
    catalog = {"reviews": REVIEW}
    data = {"reviews": rel("reviews", REVIEW, [(1, "a"), (2, "b")])}
    b = TreeBuilder(catalog)
    tree = b.build(b.sem_project(b.scan("reviews"), "Rate {reviews.text}", "score", "integer"))
    out, m = execute(tree, data, lambda prompt, output_type, template="": "five")
    assert m.warnings == 2
    assert [r[-1] for r in out.rows] == [None, None]


@given(st.integers(0, 5000), st.sampled_from([1, 2, 3, 7, 1024]))
def test_batch_size_has_no_effect(seed, batch):
    inst = random_instance(rng(seed))
    oracle = MockOracle(seed=seed, selectivity=0.5)
    a, ma = execute(inst.tree, inst.data, oracle)
    b, mb = execute(inst.tree, inst.data, oracle, batch_size=batch)
    assert normalized_multiset(a) == normalized_multiset(b)
    assert (ma.llm_calls, ma.cache_hits, ma.rows_per_node) == (mb.llm_calls, mb.cache_hits, mb.rows_per_node)


def test_parallel_evaluation_keeps_counts(fig1_tree):
    sc = scenario("fig1")
    seq, ms = execute(fig1_tree, sc.data, sc.oracle)
    par, mp = execute(fig1_tree, sc.data, sc.oracle, workers=8)
    assert normalized_multiset(seq) == normalized_multiset(par)
    assert (ms.llm_calls, ms.cache_hits) == (mp.llm_calls, mp.cache_hits)


def test_cache_concurrency_k_distinct_keys_k_misses():
    cache = FunctionCache()
    calls = Counter()
    lock = threading.Lock()

    def compute(key):
        with lock:
            calls[key] += 1
        return key.upper()

    keys = [f"k{i % 37}" for i in range(2000)]

    def worker(chunk):
        for k in chunk:
            cache.get_or_compute(k, lambda k=k: compute(k))

    threads = [threading.Thread(target=worker, args=(keys[i::8],)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(calls.values()) == 37
    assert set(calls.values()) == {1}


def test_cache_is_per_query(fig1_tree):
    sc = scenario("fig1")
    cache = FunctionCache()
    _, m1 = execute(fig1_tree, sc.data, sc.oracle, cache)
    _, m2 = execute(fig1_tree, sc.data, sc.oracle, cache)
    assert m1.llm_calls == m2.llm_calls == 4000


def test_compare_plan_with_itself_and_pulled_up(fig1_tree):
    sc = scenario("fig1")
    same = run_and_compare(fig1_tree, fig1_tree, sc.data, sc.oracle)
    assert same.equal and same.f1 == 1.0
    up = run_and_compare(fig1_tree, pull_up_all(fig1_tree).tree, sc.data, sc.oracle)
    assert up.equal and up.f1 == 1.0


def test_dropping_a_filter_gives_hand_computed_f1():
    schema = [("id", "integer"), ("txt", "text")]
    catalog = {"t": schema}
    data = {"t": rel("t", schema, [(i, f"item {i}") for i in range(10)])}
    oracle = MockOracle(seed=11, selectivity=0.4)
    b = TreeBuilder(catalog)
    with_sf = b.build(b.sem_filter(b.scan("t"), "{t.txt} is shiny?"))
    b2 = TreeBuilder(catalog)
    without = b2.build(b2.scan("t"))
    kept = sum(mock_oracle_eval(f"item {i} is shiny?", 11, 0.4) for i in range(10))
    assert 0 < kept < 10
    rep = run_and_compare(with_sf, without, data, oracle)
    assert not rep.equal
    assert rep.precision == pytest.approx(kept / 10)
    assert rep.recall == 1.0
    assert rep.f1 == pytest.approx(2 * (kept / 10) / (kept / 10 + 1))


def test_multiset_f1_counts_duplicates():
    s = [("x", "integer")]
    a = rel("t", s, [(1,), (1,), (2,)])
    b = rel("t", s, [(1,), (2,), (2,)])
    p, r, f = multiset_f1(a, b)
    assert (p, r) == (pytest.approx(2 / 3), pytest.approx(2 / 3))


def test_execution_error_on_missing_table():
    catalog = {"t": [("x", "integer")]}
    b = TreeBuilder(catalog)
    tree = b.build(b.filter(b.scan("t"), Comparison(ColumnRef("t", "x"), ">", 1)))
    with pytest.raises(ExecutionError):
        execute(tree, {}, MockOracle())


def test_relational_operators():
    catalog = {"t": [("x", "integer"), ("y", "text")]}
    data = {"t": rel("t", catalog["t"], [(3, "c"), (1, "a"), (None, "n"), (2, "b")])}
    b = TreeBuilder(catalog)
    from semplace.plan import Between, InList, IsNull, SortKey

    f = b.filter(b.scan("t"), IsNull(ColumnRef("t", "x"), negated=True))
    s = b.sort(f, [SortKey(ColumnRef("t", "x"), descending=True)])
    lim = b.limit(s, 2)
    out, _ = execute(b.build(lim), data, MockOracle())
    assert out.rows == [(3, "c"), (2, "b")]
    for pred, want in [(Between(ColumnRef("t", "x"), 1, 2), 2), (InList(ColumnRef("t", "x"), (1, 3)), 2),
                       (Comparison(ColumnRef("t", "x"), "!=", 1), 2), (IsNull(ColumnRef("t", "x")), 1)]:
        b = TreeBuilder(catalog)
        out, _ = execute(b.build(b.filter(b.scan("t"), pred)), data, MockOracle())
        assert len(out.rows) == want, pred
