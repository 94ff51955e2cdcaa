"""Walk through the books/reviews example under each placement strategy.

Run: python3 demos/books_and_reviews.py
"""

from __future__ import annotations

from semplace.bench import plan_label
from semplace.pipeline import load_scenario, run_strategies, scenario_tree


def main() -> None:
    sc = load_scenario("fig1")
    tree = scenario_tree(sc)
    print(sc.query.strip(), "\n")
    print("parsed plan:")
    print(tree.pretty(), "\n")
    runs, comparisons = run_strategies(tree, ["none", "pullup", "costmodel"], sc.data, sc.oracle,
                                       model=sc.model, config=sc.config, stats_mode=sc.stats_mode)
    for run, cmp in zip(runs, comparisons):
        print(f"{run.strategy:>9}: {run.metrics.llm_calls:5d} LLM calls, {run.metrics.cache_hits:5d} cache hits, "
              f"{len(run.result.rows):4d} rows, F1 vs none {cmp['f1']:.1f}, plan {plan_label(run.optimized.tree, tree)}")
    print("\ncost-model plan:")
    print(runs[-1].optimized.tree.pretty())


if __name__ == "__main__":
    main()
