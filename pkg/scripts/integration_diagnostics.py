"""Two integration diagnostics: growth of the open-loop tracking error under
the feedforward input, and the Riccati residual of the fixture LQR schedule
over time (where the terminal boundary layer sits)."""

import numpy as np

from sts_robust import constants as C
from sts_robust.dynamics import state_derivative
from sts_robust.lqr import linearize, paper_weights, riccati_residual, solve_riccati
from sts_robust.numerics import integrate
from sts_robust.planner import PlanSpec, build_reference


def run():
    ref = build_reference(PlanSpec())
    P = C.P_NOMINAL
    with np.errstate(all="ignore"):
        traj = integrate(lambda t, x: state_derivative(t, x, P, ref.u_hat(t)), ref.x_hat.values[0],
                         ref.grid, "rk45")
    err = np.max(np.abs(traj.values - ref.x_hat.values), axis=1)
    print("open loop under u_hat at p_hat")
    for thr in (1e-6, 1e-3, 1e-1, 1.0):
        hit = np.flatnonzero(err > thr)
        print(f"  error > {thr:g} from t = {ref.grid.nodes[hit[0]]:.3f} s" if hit.size else f"  error <= {thr:g}")
    k1, k2 = ref.grid.index_of(0.5), ref.grid.index_of(1.0)
    print(f"  growth rate on [0.5, 1.0] s: {np.log(err[k2] / err[k1]) / 0.5:.2f} 1/s")

    lin = linearize(ref, P)
    w = paper_weights()
    res = riccati_residual(lin, w, solve_riccati(lin, w))
    t = ref.grid.nodes[1:-1]
    print("Riccati residual of the fixture schedule")
    for q in (50, 90, 99, 100):
        print(f"  percentile {q:3d}: {np.percentile(res, q):.3e}")
    for lo, hi in ((0.0, 1.0), (1.0, 3.0), (3.0, 3.45), (3.45, 3.5)):
        m = (t >= lo) & (t < hi)
        print(f"  t in [{lo}, {hi}): max {res[m].max():.3e}")


if __name__ == "__main__":
    run()
