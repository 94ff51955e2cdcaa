from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import LISTING1
from semplace.cli import EXIT_BIND, EXIT_OK, EXIT_PARSE, EXIT_USAGE, main
from semplace.plan import Kind, PlanTree


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k != "timing"}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


@pytest.fixture
def catalog_file(tmp_path, catalog):
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps({t: dict(cols) for t, cols in catalog.items()}))
    return str(path)


def test_parse_emits_plan(capsys, catalog_file):
    code, out, _ = run(capsys, "parse", "--sql", LISTING1, "--catalog", catalog_file)
    assert code == EXIT_OK
    tree = PlanTree.from_dict(json.loads(out)["plan"])
    assert len(tree.nodes_of(Kind.SEM_FILTER)) == 2


def test_parse_error_exit_code(capsys, catalog_file):
    code, _, err = run(capsys, "parse", "--sql", "SELECT FROM", "--catalog", catalog_file)
    assert code == EXIT_PARSE
    payload = json.loads(err)
    assert payload["error"] == "parse" and payload["line"] == 1 and payload["column"] >= 1


def test_bind_error_exit_code(capsys, catalog_file):
    code, _, err = run(capsys, "parse", "--sql", "SELECT b.nope FROM books b", "--catalog", catalog_file)
    assert code == EXIT_BIND
    assert json.loads(err)["error"] == "bind"


def test_usage_errors(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["optimize", "--strategy", "bogus", "--preset", "fig1"])
    assert e.value.code == EXIT_USAGE
    code, _, _ = run(capsys, "parse", "--sql", "SELECT 1", "--catalog", str(tmp_path / "missing.json"))
    assert code == EXIT_USAGE


@pytest.mark.parametrize("strategy", ["none", "pullup", "costmodel"])
def test_optimize_strategies_on_fig1(capsys, strategy):
    code, out, _ = run(capsys, "optimize", "--preset", "fig1", "--strategy", strategy)
    assert code == EXIT_OK
    d = json.loads(out)
    tree = PlanTree.from_dict(d["plan"])
    (join,) = tree.nodes_of(Kind.INNER_JOIN)
    above = [f for f in tree.nodes_of(Kind.SEM_FILTER) if tree.is_ancestor(f, join)]
    assert len(above) == (0 if strategy == "none" else 2)
    assert "timing" in d


def test_optimize_stage_simplify_emits_trace(capsys, catalog_file, tmp_path):
    from conftest import LISTING2

    code, out, _ = run(capsys, "optimize", "--sql", LISTING2, "--catalog", catalog_file,
                       "--strategy", "pullup", "--stage", "simplify")
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["simplify"]["trace"][0]["rewrite"] == "pull_up_semantic_projection"


def test_optimize_verbose_traces_dp(capsys):
    code, out, _ = run(capsys, "optimize", "--preset", "fig1", "--strategy", "costmodel", "-v")
    d = json.loads(out)
    assert d["dp"]["states"] and d["dp"]["expansions"] > 0
    root_full = [s for s in d["dp"]["states"] if sorted(s["subset"]) == [4, 5]]
    assert root_full


def test_compare_fig1(capsys):
    code, out, _ = run(capsys, "compare", "--preset", "fig1")
    assert code == EXIT_OK
    d = json.loads(out)
    assert [r["llm_calls"] for r in d["results"]] == [4000, 3300, 3300]
    assert all(r["f1"] == 1.0 for r in d["results"])


def test_compare_duplicate_strategy_is_identical(capsys):
    code, out, _ = run(capsys, "compare", "--preset", "fig1", "--strategies", "pullup,pullup")
    d = json.loads(out)
    assert all(r["equal"] for r in d["results"])
    code, _, _ = run(capsys, "compare", "--preset", "fig1", "--strategies", "pullup")
    assert code == EXIT_USAGE


def test_outputs_are_deterministic_apart_from_timing(capsys):
    for argv in (["compare", "--preset", "fig1"], ["optimize", "--preset", "fig1", "-v"],
                 ["run", "--preset", "fig1", "--rows", "5"]):
        a = strip_timing(json.loads(run(capsys, *argv)[1]))
        b = strip_timing(json.loads(run(capsys, *argv)[1]))
        assert a == b, argv


def test_run_writes_result_csv(capsys, tmp_path):
    path = tmp_path / "out.csv"
    code, out, _ = run(capsys, "run", "--preset", "fig1", "--strategy", "pullup", "--result-csv", str(path))
    d = json.loads(out)
    assert d["metrics"]["llm_calls"] == 3300
    assert "wall_ms" in d["timing"]
    lines = path.read_text().splitlines()
    assert lines[0] == "books.title,reviews.text"
    assert len(lines) - 1 == d["row_count"]


def test_explain_mentions_legal_positions(capsys):
    code, out, _ = run(capsys, "explain", "--preset", "fig1")
    assert code == EXIT_OK
    assert "legal above" in out and "SEMANTIC(" in out


def test_generate_and_run_on_csv_data(capsys, tmp_path):
    code, _, _ = run(capsys, "generate", "--preset", "fig1", "--out", str(tmp_path / "d"))
    assert code == EXIT_OK
    code, out, _ = run(capsys, "run", "--sql", LISTING1.replace("\n", " "), "--data", str(tmp_path / "d"),
                       "--oracle", "mock:seed=42,sel=0.2", "--strategy", "none")
    assert code == EXIT_OK
    assert json.loads(out)["metrics"]["llm_calls"] == 4000


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 1.0}))
    _, out_file, _ = run(capsys, "explain", "--preset", "alpha-sweep", "--config", str(cfg))
    _, out_flag, _ = run(capsys, "explain", "--preset", "alpha-sweep", "--config", str(cfg), "--alpha", "1e-7")
    assert "alpha=1)" in out_file and "plan: sf4@0,sf5@0" in out_file
    assert "alpha=1e-07)" in out_flag and "plan: sf4@1,sf5@1" in out_flag


def test_bench_writes_reports(capsys, tmp_path):
    code, out, _ = run(capsys, "bench", "--preset", "alpha-sweep", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert (tmp_path / "alpha-sweep-alpha.csv").exists()
    assert json.loads(out)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "semplace", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
