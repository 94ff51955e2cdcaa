from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semplace.executor import Relation
from semplace.pipeline import load_scenario
from semplace.plan import ColumnRef, TreeBuilder
from semplace.sql import parse
from semplace.workloads import corpus_dataset, corpus_queries, generate_data, WorkloadSpec

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

LISTING1 = """SELECT b.title, r.text
FROM books b
  JOIN reviews r ON b.book_id = r.book_id
WHERE SEMANTIC('{b.description} is about AI?')
  AND SEMANTIC('{r.text} is a positive review?')
  AND r.rating >= 3"""

LISTING2 = """SELECT b.title,
  SEMANTIC_INT('Rate {r.text} sentiment 1-5') AS score
FROM books b JOIN reviews r ON b.book_id = r.book_id
WHERE score >= 4"""

BOOKS_REVIEWS = {
    "books": [("book_id", "integer"), ("title", "text"), ("description", "text"), ("author_id", "integer")],
    "reviews": [("review_id", "integer"), ("book_id", "integer"), ("rating", "integer"), ("text", "text")],
    "authors": [("author_id", "integer"), ("name", "text"), ("bio", "text")],
}


@pytest.fixture
def catalog():
    return {k: list(v) for k, v in BOOKS_REVIEWS.items()}


@functools.lru_cache(maxsize=None)
def scenario(name: str):
    return load_scenario(name)


@functools.lru_cache(maxsize=None)
def corpus_data(dataset: str):
    spec = WorkloadSpec.from_dict(corpus_dataset(dataset))
    return generate_data(spec)


@pytest.fixture(scope="session")
def fig1():
    return scenario("fig1")


def corpus_items():
    return sorted(corpus_queries().items())


def corpus_trees():
    out = []
    for name, (sql, ds) in corpus_items():
        catalog, data = corpus_data(ds)
        out.append((name, parse(sql, catalog), data))
    return out


def rel(table: str, schema, rows) -> Relation:
    r = Relation([(ColumnRef(table, c), t) for c, t in schema], [tuple(x) for x in rows])
    r.check()
    return r


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


__all__ = ["BOOKS_REVIEWS", "LISTING1", "LISTING2", "TreeBuilder", "corpus_data", "corpus_items",
           "corpus_trees", "rel", "rng", "scenario"]


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, aggregated over parametrized cases."""
    status: dict[str, bool] = {}
    titles: dict[str, str] = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            name = nodeid.split("::")[1].split("[")[0]
            status[name] = status.get(name, True) and outcome == "passed"
    if not status:
        return
    import test_acceptance

    for name in status:
        doc = (getattr(test_acceptance, name).__doc__ or "").strip().splitlines()
        titles[name] = doc[0] if doc else ""
    terminalreporter.section("acceptance criteria")
    for name in sorted(status):
        number = int(name.split("_")[2])
        word = "PASS" if status[name] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {word}  {titles[name]}")
