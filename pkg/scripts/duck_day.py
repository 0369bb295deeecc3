"""Solve the default duck day, print the price profile and the hourly-versus-continuous comparison."""
import argparse

import numpy as np

from ctdispatch.dispatch import dispatch
from ctdispatch.pricing import aggregate_hourly
from ctdispatch.scenarios import smooth_duck
from ctdispatch.verify import cross_scheme_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--intervals", type=int, default=288)
    ap.add_argument("--scheme", default="uniform")
    args = ap.parse_args()
    s = smooth_duck()
    r = dispatch(s, args.scheme, args.intervals, tol=1e-10)
    hourly = aggregate_hourly(r.schedule)
    t = r.times
    print(f"objective {r.schedule.objective:.2f} $, {r.solution.iterations} iterations")
    print(f"{'hour':>4} {'price':>9} " + " ".join(f"{k:>9}" for k in hourly))
    for h in range(24):
        i = int(np.argmin(np.abs(t - (h + 0.5))))
        print(f"{h:4d} {r.lam[i]:9.3f} " + " ".join(f"{hourly[k][h]:9.2f}" for k in hourly))
    rep = r.report()
    print("nodes with no marginal unit:", sum(1 for m in rep.marginal_set if not m))
    c = cross_scheme_check(s, 200)
    print("cross-scheme max rel diff away from switches:", f"{c.details['lambda_max_rel_diff_away_from_switches']:.2e}")


if __name__ == "__main__":
    main()
