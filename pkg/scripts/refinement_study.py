"""Grid refinement of the ergodic profile on both closed-form benchmarks.

Prints, per grid size, the lambda error and the sup-norm y and z errors on the
central 80% of [-6, 6], plus the error ratio between successive grids.

    python3 scripts/refinement_study.py [--sizes 200 400 800 1600]
"""

import argparse

import numpy as np

from ergodic_bsde.drivers import ClosedFormBenchmark
from ergodic_bsde.ergodic_solver import vanishing_discount
from ergodic_bsde.pde_solver import Grid1D


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[200, 400, 800, 1600])
    args = ap.parse_args()
    print("variant,n,h,lambda_error,y_error,z_error,y_ratio")
    for variant in ("example1", "example2"):
        b = ClosedFormBenchmark(variant)
        prev = None
        for n in args.sizes:
            g = Grid1D(-6.0, 6.0, n)
            sol = vanishing_discount(b.model(), g)
            v = g.nodes
            w = g.central_window(0.8)
            y = sol.y[0] - np.interp(0.0, v, sol.y[0])
            ye = float(np.max(np.abs(y[w] - b.y(v[w]))))
            zgap = np.abs(sol.z[0] - b.z(v))
            if variant == "example2":
                zgap[np.abs(v) < g.h] = 0.0
            ze = float(np.max(zgap[w]))
            ratio = f"{prev / ye:.3f}" if prev else ""
            print(f"{variant},{n},{g.h:.5f},{abs(sol.lam - b.lam):.3e},{ye:.3e},{ze:.3e},{ratio}")
            prev = ye


if __name__ == "__main__":
    main()
