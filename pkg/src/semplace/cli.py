"""Command line entry point: ``semplace <command> ...``.

Exit codes: 0 success, 1 usage or input error, 2 SQL syntax error,
3 binding or plan validation error, 4 optimizer error, 5 execution error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from . import __version__
from .cost import OptimizerConfig, SelectivityModel, Stats, load_cost_config
from .dataset import DatasetError, load_catalog, load_dataset
from .executor import ExecutionError, FunctionCache, execute
from .oracle import MockOracle, OracleError, SemanticOracle, oracle_from_spec
from .plan import Kind, PlanError, PlanTree
from .sql import BindError, ParseError, RenderError, parse, render_sql
from .workloads import PRESETS, WorkloadError, WorkloadSpec, generate_data, generate_workload, load_preset

log = logging.getLogger("semplace")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_BIND = 3
EXIT_OPTIMIZE = 4
EXIT_EXECUTE = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # keep exit code 2 for SQL syntax errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Resolved settings: flag over config file over preset over default."""

    alpha: float = 1e-7
    sf_selectivity: float = 0.2
    join_selectivity: float = 0.1
    rel_selectivity: float = 0.3
    cache_probe_cost: float = 1.0
    overrides: dict[int, float] = field(default_factory=dict)
    oracle: str | None = None
    seed: int | None = None
    stats: str = "estimate"
    workers: int = 1
    verbose: int = 0

    COST_KEYS = ("alpha", "sf_selectivity", "join_selectivity", "rel_selectivity", "cache_probe_cost", "overrides")

    @classmethod
    def resolve(cls, args: argparse.Namespace, preset: dict | None = None) -> RunConfig:
        merged: dict[str, Any] = {}
        if preset:
            merged.update(preset.get("cost", {}))
            if "stats" in preset:
                merged["stats"] = preset["stats"]
        path = getattr(args, "config", None)
        if path:
            try:
                merged.update(json.loads(Path(path).read_text(encoding="utf-8")))
            except (OSError, ValueError) as e:
                raise CliError(f"cannot read config {path}: {e}") from None
        flags = {
            "alpha": getattr(args, "alpha", None),
            "sf_selectivity": getattr(args, "sf_sel", None),
            "join_selectivity": getattr(args, "join_sel", None),
            "oracle": getattr(args, "oracle", None),
            "seed": getattr(args, "seed", None),
            "stats": getattr(args, "stats", None),
            "workers": getattr(args, "workers", None),
        }
        merged.update({k: v for k, v in flags.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(merged) - known
        if unknown:
            raise CliError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        merged["verbose"] = getattr(args, "verbose", 0) or 0
        cfg = cls(**merged)
        cfg.overrides = {int(k): float(v) for k, v in cfg.overrides.items()}
        return cfg

    def cost(self) -> tuple[SelectivityModel, OptimizerConfig]:
        try:
            return load_cost_config(None, **{k: getattr(self, k) for k in self.COST_KEYS})
        except ValueError as e:
            raise CliError(str(e)) from None


# ---------------------------------------------------------------------------
# inputs


@dataclass
class Inputs:
    tree: PlanTree
    catalog: dict
    data: dict | None
    oracle: SemanticOracle
    config: RunConfig
    sql: str | None = None


def _read_sql(value: str) -> str:
    p = Path(value)
    if value.endswith(".sql") or (len(value) < 4096 and "\n" not in value and p.is_file()):
        try:
            return p.read_text(encoding="utf-8")
        except OSError as e:
            raise CliError(f"cannot read {value}: {e}") from None
    return value


def _load_inputs(args: argparse.Namespace, *, need_data: bool = False) -> Inputs:
    preset = load_preset(args.preset) if getattr(args, "preset", None) else None
    cfg = RunConfig.resolve(args, preset)
    catalog = data = None
    if preset is not None:
        catalog, data = generate_data(WorkloadSpec.from_dict(preset))
    if getattr(args, "data", None):
        try:
            catalog, data = load_dataset(args.data)
        except (OSError, DatasetError) as e:
            raise CliError(f"cannot load data: {e}") from None
    if getattr(args, "catalog", None):
        try:
            catalog = load_catalog(args.catalog)
        except (OSError, ValueError, DatasetError) as e:
            raise CliError(f"cannot load catalog: {e}") from None
    sql = None
    if getattr(args, "plan", None):
        try:
            tree = PlanTree.from_json(Path(args.plan).read_text(encoding="utf-8"))
        except OSError as e:
            raise CliError(f"cannot read plan: {e}") from None
        except (ValueError, KeyError, TypeError) as e:
            raise CliError(f"malformed plan JSON: {e}", EXIT_BIND) from None
        catalog = catalog or tree.catalog
    else:
        sql = _read_sql(args.sql) if getattr(args, "sql", None) else (preset or {}).get("query")
        if sql is None:
            raise CliError("one of --sql, --plan or --preset is required")
        if catalog is None:
            raise CliError("--catalog, --data or --preset is required to bind SQL")
        tree = parse(sql, catalog)
    if need_data and data is None:
        raise CliError("this command needs --data or --preset")
    oracle = _build_oracle(cfg, preset)
    return Inputs(tree, catalog, data, oracle, cfg, sql)


def _build_oracle(cfg: RunConfig, preset: dict | None) -> SemanticOracle:
    if cfg.oracle:
        try:
            oracle = oracle_from_spec(cfg.oracle)
        except (ValueError, OSError, OracleError) as e:
            raise CliError(f"bad --oracle: {e}") from None
    elif preset is not None:
        from .pipeline import mock_from_options

        oracle = mock_from_options(preset.get("oracle", {}))
    else:
        oracle = MockOracle()
    if cfg.seed is not None and isinstance(oracle, MockOracle):
        oracle = replace(oracle, seed=cfg.seed)
    return oracle


# ---------------------------------------------------------------------------
# output


def _emit(args: argparse.Namespace, payload: Any) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    if not text.endswith("\n"):
        text += "\n"
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _render(tree: PlanTree) -> str | None:
    try:
        return render_sql(tree)
    except RenderError:
        return None


# ---------------------------------------------------------------------------
# commands


def cmd_parse(args: argparse.Namespace) -> int:
    inp = _load_inputs(args)
    _emit(args, {"plan": inp.tree.to_dict(), "nodes": len(inp.tree)})
    return EXIT_OK


def _optimize(inp: Inputs, strategy: str, stage: str | None = None):
    from .pipeline import optimize

    model, config = inp.config.cost()
    return optimize(inp.tree, strategy, model=model, config=config, data=inp.data, oracle=inp.oracle,
                    stats_mode=inp.config.stats if inp.data is not None else "estimate", stage=stage)


def cmd_optimize(args: argparse.Namespace) -> int:
    inp = _load_inputs(args)
    opt = _optimize(inp, args.strategy, args.stage)
    out = {
        "plan": opt.tree.to_dict(),
        "sql": _render(opt.tree),
        **opt.summary(),
        "timing": opt.timing,
    }
    if args.verbose:
        if opt.stats is not None:
            out["stats"] = opt.stats.to_dict()
        if opt.dp is not None:
            out["dp"] = {"expansions": opt.dp.table.expansions, "states": opt.dp_states()}
    _emit(args, out)
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    from .bench import plan_label
    from .cost import CostContext
    from .dp import evaluate_placement, placement_of
    from .pullup import legal_positions

    inp = _load_inputs(args)
    opt = _optimize(inp, args.strategy)
    model, config = inp.config.cost()
    before = opt.simplify.tree if opt.simplify is not None else inp.tree
    lines = [f"strategy: {args.strategy}", f"plan: {plan_label(opt.tree, before)}", ""]
    legal = {f: legal_positions(before, f) for f in before.nodes_of(Kind.SEM_FILTER)}

    stats = opt.stats if opt.stats is not None else Stats()
    if inp.data is not None and opt.stats is None:
        from .cost import stats_from_data

        stats = stats_from_data(inp.data)
    try:
        ctx = CostContext(opt.tree, model, config, stats)
    except PlanError as e:
        ctx = None
        lines.append(f"no estimates: {e}")

    def note(nid: int) -> str:
        if nid in legal:
            return f"   legal above {legal[nid]}"
        if ctx is not None and nid in ctx.skeleton:
            return f"   ~{float(ctx.rows(nid)):.0f} rows"
        return ""

    lines.append(opt.tree.pretty(note))
    try:
        if ctx is None:
            raise PlanError("no cost context")
        est = evaluate_placement(ctx, placement_of(opt.tree))
        lines += ["", f"estimated llm calls: {est.llm_rows:.1f}",
                  f"estimated relational rows: {est.rel_rows:.1f}",
                  f"objective (alpha={config.alpha:g}): {est.total:.4f}"]
    except PlanError as e:
        lines += ["", f"no estimate: {e}"]
    sql = _render(opt.tree)
    if sql:
        lines += ["", sql]
    _emit(args, "\n".join(lines))
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    inp = _load_inputs(args, need_data=True)
    opt = _optimize(inp, args.strategy)
    result, metrics = execute(opt.tree, inp.data, inp.oracle, FunctionCache(), workers=inp.config.workers)
    m = metrics.to_dict()
    wall = m.pop("wall_time", metrics.wall_time)
    out = {
        "strategy": args.strategy,
        "columns": [str(c) for c in result.columns],
        "row_count": len(result.rows),
        "metrics": m,
        "timing": {**opt.timing, "execute": wall},
    }
    out["timing"]["wall_ms"] = wall * 1000.0
    if args.rows is not None:
        out["rows"] = [list(r) for r in sorted(result.rows, key=repr)[: args.rows]]
    if args.result_csv:
        from .dataset import write_relation_csv

        write_relation_csv(args.result_csv, result)
    _emit(args, out)
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    from .pipeline import run_strategies

    inp = _load_inputs(args, need_data=True)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if len(strategies) < 2:
        raise CliError("--strategies needs at least two entries")
    model, config = inp.config.cost()
    runs, comparisons = run_strategies(inp.tree, strategies, inp.data, inp.oracle, model=model, config=config,
                                       stats_mode=inp.config.stats, workers=inp.config.workers)
    results = []
    for r, c in zip(runs, comparisons):
        d = r.to_dict()
        d.update({k: c[k] for k in ("equal", "precision", "recall", "f1")})
        results.append(d)
    timing = {f"{i}:{d['strategy']}": d.pop("timing") for i, d in enumerate(results)}
    _emit(args, {"against": strategies[0], "results": results, "timing": timing})
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import run_preset

    reports = run_preset(args.preset, args.out, latency_ms=args.latency_ms, parallel=args.parallel)
    summary = {r.name: r.summary for r in reports}
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    if args.spec:
        spec = WorkloadSpec.load(args.spec)
    elif args.preset:
        spec = WorkloadSpec.from_dict(load_preset(args.preset))
    else:
        raise CliError("generate needs --preset or --spec")
    path = generate_workload(spec, args.out)
    sys.stdout.write(json.dumps({"dataset": str(path), "tables": sorted(spec.tables)}, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, *, inputs: bool = True, cost: bool = True) -> None:
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("--config", help="JSON file with configuration keys")
    if inputs:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--sql", help="query text or a path to a .sql file")
        src.add_argument("--plan", help="plan JSON file")
        p.add_argument("--catalog", help="catalog JSON file or dataset directory")
        p.add_argument("--data", help="dataset directory (<table>.csv + <table>.schema.json)")
        p.add_argument("--preset", choices=PRESETS, help="use a shipped workload for data, query and oracle")
        p.add_argument("--oracle", help="mock:seed=N,sel=F,latency_ms=M | recorded:path=P | remote:model=M")
        p.add_argument("--seed", type=int, help="seed for the mock oracle")
        p.add_argument("--workers", type=int, help="threads for semantic operator calls")
        p.add_argument("--out", help="write output to this file instead of stdout")
    if cost:
        p.add_argument("--alpha", type=float, help="weight of relational rows against LLM calls")
        p.add_argument("--sf-sel", type=float, help="default semantic filter selectivity")
        p.add_argument("--join-sel", type=float, help="distinct-count reduction per inner join")
        p.add_argument("--stats", choices=("estimate", "exact"), help="statistics for the cost model")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="semplace", description="Placement of semantic operators in hybrid query plans.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="parse and bind SQL into plan JSON")
    _common(p, cost=False)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("optimize", help="simplify and place semantic filters")
    _common(p)
    p.add_argument("--strategy", choices=("none", "pullup", "costmodel"), default="costmodel")
    p.add_argument("--stage", choices=("simplify",), help="stop after simplification")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("explain", help="human-readable plan with legal positions and estimates")
    _common(p)
    p.add_argument("--strategy", choices=("none", "pullup", "costmodel"), default="costmodel")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("run", help="optimize and execute")
    _common(p)
    p.add_argument("--strategy", choices=("none", "pullup", "costmodel"), default="costmodel")
    p.add_argument("--rows", type=int, help="include up to this many result rows (sorted)")
    p.add_argument("--result-csv", help="write the full result relation to this CSV file")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="execute several strategies and compare results")
    _common(p)
    p.add_argument("--strategies", default="none,pullup,costmodel")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="run a shipped experiment and write CSV + JSON reports")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--latency-ms", type=float, help="override the mock oracle's per-call latency")
    p.add_argument("--parallel", type=int, default=1,
                   help="threads for semantic calls; timing columns are omitted when above 1")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("generate", help="write a workload's dataset as CSV files")
    p.add_argument("-v", "--verbose", action="count", default=0)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=PRESETS)
    g.add_argument("--spec", help="workload spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)
    return ap


def _setup_logging(verbose: int) -> None:
    level = logging.WARNING if verbose <= 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _fail(code: int, kind: str, message: str, extra: dict | None = None) -> int:
    payload = {"error": kind, "message": message, "exit_code": code, **(extra or {})}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    from .dp import PlacementError
    from .rewrite import RewriteError

    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", 0))
    try:
        return args.func(args)
    except ParseError as e:
        return _fail(EXIT_PARSE, "parse", str(e), {"line": e.line, "column": e.col, "position": e.position})
    except BindError as e:
        return _fail(EXIT_BIND, "bind", str(e), {"line": e.line, "column": e.col, "position": e.position})
    except (RewriteError, PlacementError) as e:
        return _fail(EXIT_OPTIMIZE, "optimize", str(e))
    except (ExecutionError, OracleError) as e:
        return _fail(EXIT_EXECUTE, "execute", str(e))
    except PlanError as e:
        return _fail(EXIT_BIND, "plan", str(e))
    except CliError as e:
        return _fail(e.code, "usage", str(e))
    except (WorkloadError, DatasetError, ValueError) as e:
        return _fail(EXIT_USAGE, "input", str(e))
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
