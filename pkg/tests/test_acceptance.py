"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from ctdispatch.dispatch import dispatch
from ctdispatch.pricing import aggregate_hourly
from ctdispatch.qp import residuals
from ctdispatch.scenarios import (
    energy_cost_single,
    ramp_cost_single,
    ramp_scarcity,
    random_scenario,
    smooth_duck,
    two_unit,
)
from ctdispatch.trajectory import integrate
from ctdispatch.verify import PerturbationSpec, Shape, cross_scheme_check, perturbation_check, refinement_study

TIGHT = dict(tol=1e-10)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail

    return emit


def test_c01_kkt_suite(report):
    rng = np.random.default_rng(20240601)
    worst_gap = worst_cs = worst_time = 0.0
    statuses = []
    for _ in range(20):
        s = random_scenario(rng)
        t0 = time.perf_counter()
        r = dispatch(s, "uniform", 100, tol=1e-10, comp_tol=1e-8)
        elapsed = time.perf_counter() - t0
        statuses.append(r.solution.status.value)
        worst_gap = max(worst_gap, r.solution.rel_gap)
        worst_cs = max(worst_cs, residuals(r.qp, r.solution).complementarity)
        worst_time = max(worst_time, elapsed)
    ok = all(x == "optimal" for x in statuses) and worst_gap <= 1e-8 and worst_cs <= 1e-7 and worst_time <= 5
    report(1, ok, f"20 scenarios optimal, max rel gap {worst_gap:.2e}, max cs {worst_cs:.2e}, max time {worst_time:.2f}s")


def test_c02_two_unit_analytic(report):
    errs = []
    for scheme in ("uniform", "spline"):
        r = dispatch(two_unit(), scheme, 100, **TIGHT)
        t = r.times
        errs.append(float(np.max(np.abs(r.lam - 2.0))))
        errs.append(float(np.max(np.abs(r.schedule.x["u1"](t) - 2.0))))
        errs.append(float(np.max(np.abs(r.schedule.x["u2"](t) - 1.0))))
    oracle = dispatch(two_unit(), "uniform", 1000, **TIGHT)
    errs.append(float(np.max(np.abs(oracle.lam - 2.0))))
    report(2, max(errs) <= 1e-6, f"max |x - (2,1)|, |lambda - 2| = {max(errs):.2e}")


def test_c03_marginal_price_identity(report):
    s = smooth_duck()
    r = dispatch(s, "uniform", 200, **TIGHT)
    rep = r.report()
    worst = 0.0
    count = 0
    for i, members in enumerate(rep.marginal_set):
        if not members:
            continue
        count += 1
        worst = max(worst, rep.residual[i] / (1 + abs(r.lam[i])))
    report(3, count > 0 and worst <= 1e-5, f"{count} marginal nodes, max |lambda - dC/dx|/(1+|lambda|) = {worst:.2e}")


def test_c04_ramp_scarcity_decomposition(report):
    s = ramp_scarcity()
    n = 100
    r = dispatch(s, "uniform", n, **TIGHT)
    dt = s.horizon.length / n
    m = r.multipliers
    gamma = m.node_values("cheap", "gamma_hi")
    window = np.flatnonzero(gamma > 1e-6)
    window = window[(window > 0) & (window < r.times.size - 1)]
    price_err = float(np.max(np.abs(r.lam[window] - 2.0)))
    # identity: lambda = dC/dx + mu_hi - mu_lo - dgamma_hi/dt + dgamma_lo/dt, with the
    # derivative taken by centered differences of the interval-sampled ramp multipliers
    um = m.units["cheap"]
    dg = um.dgamma_hi_dt - um.dgamma_lo_dt
    mu = m.node_values("cheap", "mu_hi") - m.node_values("cheap", "mu_lo")
    ident = 1.0 + mu - dg
    ident_err = float(np.max(np.abs(r.lam[window] - ident[window])))
    fine = dispatch(s, "uniform", 10 * n, **TIGHT)
    oracle_err = float(np.max(np.abs(fine.lam[1:-1] - 2.0)))
    ok = price_err <= 1e-4 and ident_err <= 5 * dt and oracle_err <= 1e-4
    report(4, ok, f"window of {window.size} nodes, |lambda-2| {price_err:.2e}, identity residual {ident_err:.2e} "
                  f"(bound {5 * dt:.2e}), fine-grid |lambda-2| {oracle_err:.2e}")


def test_c05_load_lift_sensitivity(report):
    s = two_unit()
    lift = perturbation_check(s, PerturbationSpec(1e-3), "uniform", 400)
    rhs_all = lift.details["rhs_all_nodes"]
    rel_lift = abs(lift.lhs - rhs_all) / abs(rhs_all)
    spec = PerturbationSpec(1e-3, Shape.CUSTOM, eta=lambda t: np.sin(np.pi * t))
    sine = perturbation_check(s, spec, "uniform", 400)
    ok = rel_lift <= 1e-2 and sine.rel_error <= 1e-2 and lift.passed and sine.passed
    report(5, ok, f"uniform lift rel err {rel_lift:.2e}, sine rel err {sine.rel_error:.2e}")


def test_c06_ramp_cost_price_refinement(report):
    rep = refinement_study(ramp_cost_single(), [50, 100, 200, 400], "spline", exact_lambda=lambda t: t**2 - 2, **TIGHT)
    errs = rep.details["lambda_error_vs_exact"]
    orders = rep.orders["lambda_vs_exact"]
    ok = rep.details["monotone_vs_exact"] and min(orders) >= 1.0 and errs[-1] <= 5e-2
    report(6, ok, f"errors {', '.join(f'{e:.2e}' for e in errs)}, orders {', '.join(f'{o:.2f}' for o in orders)}")


def test_c07_energy_cost_price(report):
    s = energy_cost_single()
    r = dispatch(s, "uniform", 400, **TIGHT)
    t = r.times
    expected = 4 - 0.1 * (t - s.horizon.t1)
    err = float(np.max(np.abs(r.lam - expected)))
    report(7, err <= 5e-3, f"max |lambda - (4 - 0.1 (t - t1))| = {err:.3e} (bound 5e-3)")


def test_c08_cross_scheme(report):
    rep = cross_scheme_check(smooth_duck(), 200, margin=2, **TIGHT)
    d = rep.details
    report(8, rep.passed, f"{d['nodes_compared']} nodes away from {len(d['switch_nodes'])} switches, "
                          f"max rel diff {d['lambda_max_rel_diff_away_from_switches']:.2e}")


def test_c09_invariance(report):
    worst_shift = worst_x = worst_lam = 0.0
    for s, n in ((two_unit(), 100), (ramp_scarcity(), 100), (smooth_duck(), 200)):
        base = dispatch(s, "uniform", n, **TIGHT)
        shifted = dispatch(s.with_costs(lambda c: replace(c, a0=c.a0 + 1234.5)), "uniform", n, **TIGHT)
        scaled = dispatch(s.scaled(3.0), "uniform", n, **TIGHT)
        t = base.times
        for k in base.schedule.x:
            worst_shift = max(worst_shift, float(np.max(np.abs(base.schedule.x[k](t) - shifted.schedule.x[k](t)))))
            worst_x = max(worst_x, float(np.max(np.abs(base.schedule.x[k](t) - scaled.schedule.x[k](t)))))
        worst_shift = max(worst_shift, float(np.max(np.abs(base.lam - shifted.lam))))
        rel = np.abs(scaled.lam - 3 * base.lam) / np.maximum(np.abs(3 * base.lam), 1e-12)
        worst_lam = max(worst_lam, float(np.max(rel)))
    ok = worst_shift <= 1e-7 and worst_x <= 1e-6 and worst_lam <= 1e-6
    report(9, ok, f"a0 shift diff {worst_shift:.2e}, x diff under x3 {worst_x:.2e}, lambda rel err {worst_lam:.2e}")


def test_c10_hourly_aggregation(report):
    rng = np.random.default_rng(7)
    cases = [two_unit(), ramp_scarcity(), energy_cost_single(), smooth_duck()]
    cases += [random_scenario(rng) for _ in range(5)]
    worst = 0.0
    solved = 0
    for s in cases:
        for scheme in ("uniform", "spline"):
            r = dispatch(s, scheme, 96 if s.horizon.length > 20 else 40, **TIGHT)
            if not math.isclose(s.horizon.length, round(s.horizon.length)):
                continue
            hourly = aggregate_hourly(r.schedule)
            total = math.fsum(float(v) for arr in hourly.values() for v in arr)
            y = r.dmap.load
            worst = max(worst, abs(total - integrate(y, s.horizon.t1, s.horizon.t2)))
            solved += 1
    report(10, worst <= 1e-9, f"{solved} solves, max |sum of hourly energy - integral of load| = {worst:.2e}")
