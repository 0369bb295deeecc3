"""Reference scenarios with known prices, plus a random scenario generator."""
from __future__ import annotations

import math

import numpy as np

from .market import CostFunction, DuckParams, Scenario, Slack, Unit, duck_curve, duck_value, function_scenario
from .trajectory import Horizon, Mesh, Scheme

INF = math.inf


def two_unit() -> Scenario:
    """Costs x^2/2 and x^2 serving a flat load of 3: x = (2, 1), price 2."""
    units = [
        Unit("u1", 0.0, 10.0, -100.0, 100.0, cost=CostFunction(a2=0.5)),
        Unit("u2", 0.0, 10.0, -100.0, 100.0, cost=CostFunction(a2=1.0)),
    ]
    return function_scenario(Horizon(0.0, 1.0), lambda t: 3.0 + 0.0 * t, units, dfn=lambda t: 0.0 * t, label="two_unit")


def ramp_scarcity(horizon: float = 2.0) -> Scenario:
    """Cheap unit limited to ramp 1 MW/h against a load rising at 3 MW/h."""
    units = [
        Unit("cheap", 0.0, 1000.0, -1.0, 1.0, cost=CostFunction(a1=1.0)),
        Unit("exp", 0.0, 1000.0, cost=CostFunction(a1=2.0)),
    ]
    return function_scenario(
        Horizon(0.0, horizon), lambda t: 10.0 + 3.0 * t, units, dfn=lambda t: 3.0 + 0.0 * t, label="ramp_scarcity"
    )


def ramp_cost_single() -> Scenario:
    """One unit with cost x^2/2 + xdot^2/2 following y = t^2; price is t^2 - 2 in the interior."""
    units = [Unit("g", -INF, INF, cost=CostFunction(a2=0.5, b2=0.5))]
    return function_scenario(
        Horizon(0.0, 1.0), lambda t: t**2, units, slack=Slack(False), dfn=lambda t: 2.0 * t, label="ramp_cost_single"
    )


def energy_cost_single() -> Scenario:
    """One unit with cost x^2/2 + 0.1 z on a flat load of 4 over [0, 2]."""
    units = [Unit("g", -INF, INF, cost=CostFunction(a2=0.5, e1=0.1))]
    return function_scenario(
        Horizon(0.0, 2.0), lambda t: 4.0 + 0.0 * t, units, slack=Slack(False), dfn=lambda t: 0.0 * t,
        label="energy_cost_single",
    )


DUCK_UNITS = (
    Unit("base", 200.0, 900.0, -100.0, 100.0, cost=CostFunction(a1=10.0, a2=0.01)),
    Unit("mid", 0.0, 600.0, -300.0, 300.0, cost=CostFunction(a1=20.0, a2=0.02)),
    Unit("peak", 0.0, 500.0, -1000.0, 1000.0, cost=CostFunction(a1=40.0, a2=0.05)),
)


def smooth_duck(params: DuckParams | None = None, units=DUCK_UNITS) -> Scenario:
    """Default duck day served by three quadratic plain-bid units."""
    p = params or DuckParams()

    def dfn(t, h=1e-5):
        return (duck_value(p, t + h) - duck_value(p, t - h)) / (2 * h)

    s = function_scenario(Horizon(0.0, 24.0), lambda t: duck_value(p, t), list(units), dfn=dfn, label="smooth_duck")
    # validate positivity through the generator
    duck_curve(p, Mesh.uniform(s.horizon, 24), Scheme.PIECEWISE_LINEAR)
    return s


def random_scenario(rng: np.random.Generator, n_units: int | None = None, horizon: float = 4.0) -> Scenario:
    """Feasible scenario mixing plain, ramp-priced, absolute-ramp and energy bids."""
    K = int(n_units if n_units is not None else rng.integers(1, 6))
    units = []
    for k in range(K):
        cls = rng.integers(0, 4)
        a1 = float(rng.uniform(5, 50))
        a2 = float(rng.uniform(0.0, 0.5))
        b2 = float(rng.uniform(0.0, 0.5)) if cls == 1 else 0.0
        b_abs = float(rng.uniform(0.1, 3.0)) if cls == 2 else 0.0
        e1 = float(rng.uniform(0.0, 2.0)) if cls == 3 else 0.0
        p_min = float(rng.uniform(0, 10))
        p_max = p_min + float(rng.uniform(30, 80))
        r = float(rng.uniform(5, 60))
        z_max = float(rng.uniform(0.5, 0.9) * p_max * horizon) if cls == 3 else None
        units.append(
            Unit(
                f"g{k}", p_min, p_max, -r, r, z_max=z_max,
                cost=CostFunction(a0=float(rng.uniform(0, 10)), a1=a1, a2=a2, b2=b2, b_abs=b_abs, e1=e1),
            )
        )
    cap = sum(u.p_max for u in units)
    base = float(rng.uniform(0.3, 0.6)) * cap
    amp = float(rng.uniform(0.05, 0.25)) * cap
    phase = float(rng.uniform(0, 2 * math.pi))
    w = 2 * math.pi / horizon

    def fn(t):
        return base + amp * np.sin(w * t + phase)

    def dfn(t):
        return amp * w * np.cos(w * t + phase)

    return function_scenario(Horizon(0.0, horizon), fn, units, slack=Slack(True, 1000.0), dfn=dfn, label="random")
