"""ILC cost inflation under imperfect recall and body-parameter error.

Runs the nominal 30-iteration training at p_hat, then perturbed recall at
p_hat and warm-started runs at the light and heavy parameter sets, and
prints a per-scenario table.
"""

import argparse
import math

from sts_robust import constants as C
from sts_robust.ilc import IlcGains, IlcScenario
from sts_robust.lqr import linearize, paper_weights, solve_riccati
from sts_robust.planner import PlanSpec, build_reference


def fmt(c):
    return f"{c:8.3f}" if math.isfinite(c) else "   abort"


def run():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1, help="recall perturbation seed")
    ap.add_argument("--iterations", type=int, default=30)
    args = ap.parse_args()

    ref = build_reference(PlanSpec())
    lin = linearize(ref, C.P_NOMINAL)
    lqr = solve_riccati(lin, paper_weights())
    gains = IlcGains.paper()
    n = args.iterations
    nominal = IlcScenario(ref, lin, lqr, C.P_NOMINAL.copy(), n_iterations=n).run(gains)
    warm = nominal[-1].mu if not nominal[-1].aborted else None
    runs = {
        "nominal": nominal,
        "perturbed": IlcScenario(ref, lin, lqr, C.P_NOMINAL.copy(), n_iterations=n,
                                 recall_mode="perturbed", seed=args.seed).run(gains),
        "light": IlcScenario(ref, lin, lqr, C.P_LIGHT.copy(), n_iterations=n, mu0=warm).run(gains),
        "heavy": IlcScenario(ref, lin, lqr, C.P_HEAVY.copy(), n_iterations=n, mu0=warm).run(gains),
    }
    print("  j " + "".join(f"{name:>10}" for name in runs))
    for j in range(n):
        print(f"{j + 1:3d} " + "".join(f"  {fmt(r[j].cost)}" for r in runs.values()))
    base = nominal[-1].cost
    for name, r in runs.items():
        finite = [x.cost for x in r if math.isfinite(x.cost)]
        best = min(finite) if finite else math.inf
        print(f"{name:>10}: completed {len(finite):2d}/{n}, best {fmt(best)}, inflation {fmt(best - base)}")


if __name__ == "__main__":
    run()
