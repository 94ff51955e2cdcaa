"""Show how the weight on relational work moves semantic filters across a join.

Run: python3 demos/alpha_regimes.py
"""

from __future__ import annotations

import numpy as np

from semplace.bench import sweep_alpha
from semplace.pipeline import load_scenario


def main() -> None:
    sc = load_scenario("alpha-sweep")
    rep = sweep_alpha(sc, np.logspace(-7, 0, 8))
    print(f"{'alpha':>8} {'est llm':>10} {'est rel':>12} {'calls':>6}  plan")
    for r in rep.rows:
        print(f"{r['alpha']:8.0e} {r['est_llm']:10.1f} {r['est_rel']:12.1f} {r['llm_calls']:6d}  {r['plan']}")
    print("\nregimes:")
    for g in rep.summary["regimes"]:
        print(f"  {g['from']:.0e} .. {g['to']:.0e}: {g['plan']}")


if __name__ == "__main__":
    main()
