"""Grid refinement of the energy identity and the pointwise bound at fixed eps.

Usage: python3 scripts/refinement_study.py [--eps 0.5] [--sizes 16 32 64]
"""
import argparse

import numpy as np

from semistab import he_solver as hs
from semistab.scenarios import build_bundle, library_spec


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--eps", type=float, default=0.5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--amplitude", type=float, default=0.3)
    args = ap.parse_args()
    weight = {"kind": "cosine", "amplitude": args.amplitude, "mode": [1, 0]}
    print(f"{'N':>4} {'centered':>12} {'order':>6} {'lattice':>12} {'sb(i) viol':>12} {'iters':>5}")
    prev = None
    for N in args.sizes:
        b, m = build_bundle(library_spec("E2", N=N, weight=weight))
        bg = hs.normalize_background(b, m)
        res = hs.solve_at_eps(args.eps, bg)
        c = abs(hs.check_energy_identity(res, bg, "centered")["residual"])
        lat = abs(hs.check_energy_identity(res, bg, "lattice")["residual"])
        viol = hs.check_sup_bound(res, bg)["pointwise_violation"]
        order = "" if prev is None else f"{np.log2(prev / c):.3f}"
        print(f"{N:>4} {c:12.4e} {order:>6} {lat:12.4e} {viol:12.4e} {res.iterations:>5}")
        prev = c


if __name__ == "__main__":
    main()
