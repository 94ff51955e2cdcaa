"""Why maximal pull-up is not always cheapest: stack order and partial pull-up.

Both filters are pulled above the join by the pull-up pass; the cost-based
placer may keep one below or reorder the stack. Each candidate is executed
with the same oracle so the call counts are measured, not estimated.

Run: python3 demos/stack_order.py
"""

from __future__ import annotations

from semplace.bench import plan_label
from semplace.executor import execute
from semplace.oracle import MockOracle
from semplace.pipeline import load_scenario, optimize, scenario_tree
from semplace.plan import Kind
from semplace.pullup import legal_positions, place_filter_at


def main() -> None:
    sc = load_scenario("fig1")
    oracle = MockOracle(seed=42, selectivity=0.2)
    base = optimize(scenario_tree(sc), "pullup").simplify.tree
    f1, f2 = sorted(base.nodes_of(Kind.SEM_FILTER))
    seen = set()
    for a in legal_positions(base, f1):
        for b in legal_positions(base, f2):
            for first, second, pa, pb in ((f1, f2, a, b), (f2, f1, b, a)):
                t = place_filter_at(place_filter_at(base, first, pa), second, pb)
                label = plan_label(t, base)
                if label in seen:
                    continue
                seen.add(label)
                _, m = execute(t, sc.data, oracle)
                print(f"{m.llm_calls:6d} calls  {label}")


if __name__ == "__main__":
    main()
