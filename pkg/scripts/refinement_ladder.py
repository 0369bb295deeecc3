"""Price error against closed forms or the finest mesh as the mesh is refined."""
import argparse

from ctdispatch.scenarios import energy_cost_single, ramp_cost_single, smooth_duck
from ctdispatch.verify import refinement_study

CASES = {
    "ramp_cost": (ramp_cost_single, lambda t: t**2 - 2),
    "energy": (energy_cost_single, lambda t: 4 + 0.1 * (2 - t)),
    "duck": (smooth_duck, None),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", choices=sorted(CASES), default="ramp_cost")
    ap.add_argument("--counts", default="50,100,200,400")
    args = ap.parse_args()
    make, exact = CASES[args.case]
    counts = [int(c) for c in args.counts.split(",")]
    for scheme in ("uniform", "spline"):
        rep = refinement_study(make(), counts, scheme, exact_lambda=exact)
        key = "lambda_error_vs_exact" if exact else "lambda_error_vs_finest"
        print(f"[{scheme}]")
        for n, e in zip(counts, rep.details[key]):
            print(f"  N={n:5d}  error={e:.3e}")
        print("  orders:", {k: [round(o, 2) for o in v] for k, v in rep.orders.items()})
        print("  Euler-Lagrange interior max:", [f"{v:.1e}" for v in rep.details["euler_lagrange_interior_max"]])


if __name__ == "__main__":
    main()
