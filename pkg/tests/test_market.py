import json
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ctdispatch.market import (
    CostFunction,
    DuckParams,
    IngestionError,
    NondifferentiableError,
    Unit,
    cost_gradients,
    cost_value,
    duck_curve,
    duck_value,
    load_scenario,
    scenario_to_dict,
    serialize_scenario,
)
from ctdispatch.trajectory import Horizon, Mesh, Scheme

nonneg = st.floats(0, 10, allow_nan=False)
real = st.floats(-10, 10, allow_nan=False)
point = st.tuples(real, real, real)


@st.composite
def costs(draw, with_abs=True):
    return CostFunction(
        a0=draw(real), a1=draw(real), a2=draw(nonneg), b1=draw(real), b2=draw(nonneg),
        b_abs=draw(nonneg) if with_abs else 0.0, e1=draw(real), e2=draw(nonneg),
    )


def minimal(**over):
    unit = {
        "id": "g", "p_min": 0, "p_max": 10, "r_min": -1, "r_max": 1, "z_max": None,
        "cost": {"a0": 0, "a1": 1, "a2": 0, "b1": 0, "b2": 0, "b_abs": 0, "e1": 0, "e2": 0},
    }
    unit.update(over)
    return {
        "horizon": {"t1": 0, "t2": 2},
        "load": {"kind": "samples", "times": [0, 1, 2], "values": [1, 2, 1]},
        "units": [unit],
        "slack": {"enabled": True, "price": 500},
    }


def test_cost_value_examples():
    assert cost_value(CostFunction(), 0, 0, 0) == 0
    assert cost_value(CostFunction(a1=1), 0, 5, 0) == 5
    assert cost_value(CostFunction(a2=0.5, b2=0.5), 0, 2, 3) == pytest.approx(6.5)
    assert cost_value(CostFunction(b_abs=2, e1=1, e2=1), 3, 0, -4) == pytest.approx(8 + 3 + 9)


def test_cost_gradient_examples():
    assert cost_gradients(CostFunction(), 0, 0, 0) == (0, 0, 0)
    assert cost_gradients(CostFunction(a2=0.5), 0, 2, 1)[1] == pytest.approx(2)
    assert cost_gradients(CostFunction(e1=0.1), 7, 0, 1)[0] == pytest.approx(0.1)
    assert cost_gradients(CostFunction(b1=1, b_abs=2), 0, 0, -3)[2] == pytest.approx(-1)


def test_gradient_at_kink_raises_with_subgradient():
    with pytest.raises(NondifferentiableError, match=r"\[-1, 3\]"):
        cost_gradients(CostFunction(b1=1, b_abs=2), 0, 0, 0.0)


def test_negative_curvature_rejected():
    with pytest.raises(IngestionError, match="a2"):
        CostFunction(a2=-1)


@given(costs(), point, point)
def test_cost_is_convex(c, p, q):
    mid = tuple(0.5 * (a + b) for a, b in zip(p, q))
    lhs = cost_value(c, *mid)
    rhs = 0.5 * (cost_value(c, *p) + cost_value(c, *q))
    assert lhs <= rhs + 1e-12 * (1 + abs(rhs))


@given(costs(), point)
def test_gradients_match_central_differences(c, p):
    z, x, r = p
    assume(c.b_abs == 0 or abs(r) > 1e-3)
    h = 1e-6
    g = cost_gradients(c, z, x, r)
    fd = (
        (cost_value(c, z + h, x, r) - cost_value(c, z - h, x, r)) / (2 * h),
        (cost_value(c, z, x + h, r) - cost_value(c, z, x - h, r)) / (2 * h),
        (cost_value(c, z, x, r + h) - cost_value(c, z, x, r - h)) / (2 * h),
    )
    for a, b in zip(g, fd):
        assert a == pytest.approx(b, rel=1e-6, abs=1e-6)


def test_unit_invariants():
    with pytest.raises(IngestionError, match="p_min > p_max"):
        Unit("g", 5, 3)
    with pytest.raises(IngestionError, match="r_min <= 0 <= r_max"):
        Unit("g", 0, 3, 1, 2)
    with pytest.raises(IngestionError, match="z_max requires p_min >= 0"):
        Unit("g", -1, 3, z_max=5)


def test_load_minimal_scenario():
    s = load_scenario(json.dumps(minimal()).encode())
    assert s.K == 1
    assert s.slack.price == 500
    assert s.load(0.5) == pytest.approx(1.5)


def test_bad_bounds_named_in_error():
    with pytest.raises(IngestionError, match="p_min > p_max"):
        load_scenario(json.dumps(minimal(p_min=5, p_max=3)))


def test_sample_count_mismatch_is_schema_error():
    data = minimal()
    data["load"]["values"] = [1, 2]
    with pytest.raises(IngestionError, match="2 samples but load.times has 3"):
        load_scenario(json.dumps(data))


def test_unknown_key_rejected():
    data = minimal()
    data["units"][0]["colour"] = "red"
    with pytest.raises(IngestionError, match="colour"):
        load_scenario(json.dumps(data))


def test_null_bounds_are_unbounded():
    s = load_scenario(json.dumps(minimal(r_min=None, r_max=None)))
    assert math.isinf(s.units[0].r_max) and s.units[0].r_max > 0


@pytest.mark.parametrize("scheme", ["uniform", "spline"])
def test_scenario_round_trip(scheme):
    text = json.dumps(minimal(z_max=4.0))
    s = load_scenario(text, scheme)
    again = load_scenario(serialize_scenario(s), scheme)
    assert scenario_to_dict(again) == scenario_to_dict(s)
    assert again.units == s.units


@given(
    st.lists(st.floats(0.5, 50), min_size=2, max_size=8),
    st.floats(0, 5), st.floats(0, 5), st.floats(0, 3), st.floats(-3, 0),
)
def test_round_trip_property(values, a1, a2, rmax, rmin):
    data = minimal(r_min=rmin, r_max=rmax)
    data["units"][0]["cost"].update(a1=a1, a2=a2)
    data["load"] = {"kind": "samples", "times": list(np.linspace(0, 2, len(values))), "values": values}
    s = load_scenario(json.dumps(data))
    assert scenario_to_dict(load_scenario(serialize_scenario(s))) == scenario_to_dict(s)


def test_duck_scenario_json():
    data = minimal()
    data["horizon"] = {"t1": 0, "t2": 24}
    data["load"] = {"kind": "duck", "params": {"solar_depth": 400}}
    s = load_scenario(json.dumps(data))
    assert s.load(13.0) == pytest.approx(duck_value(DuckParams(solar_depth=400), 13.0), rel=1e-12)


def test_duck_flat_when_no_bumps():
    p = DuckParams(morning_peak=0, evening_peak=0, solar_depth=0)
    tr = duck_curve(p, Mesh.uniform(Horizon(0, 24), 48))
    assert np.allclose(tr.knot_values, 1000.0)


def test_duck_solar_only_minimum_at_center():
    p = DuckParams(morning_peak=0, evening_peak=0, solar_depth=300, solar_center=11.5)
    t = np.linspace(0, 24, 24 * 60 + 1)
    assert t[np.argmin(duck_value(p, t))] == pytest.approx(11.5)


def test_duck_default_steepest_rise_between_solar_and_evening():
    # oracle: scan the closed form on a one-minute grid
    p = DuckParams()
    t = np.linspace(0, 24, 24 * 60 + 1)
    slope = np.gradient(duck_value(p, t), t)
    t_star = t[np.argmax(slope)]
    assert p.solar_center < t_star < p.evening_center


def test_duck_rejects_nonpositive_load():
    with pytest.raises(IngestionError, match="non-positive"):
        duck_curve(DuckParams(base=100, solar_depth=500), Mesh.uniform(Horizon(0, 24), 24))


def test_duck_needs_a_day():
    with pytest.raises(IngestionError, match="24 h"):
        duck_curve(DuckParams(), Mesh.uniform(Horizon(0, 12), 24))


def test_spline_scheme_interpolates_samples():
    s = load_scenario(json.dumps(minimal()), Scheme.CUBIC_HERMITE)
    assert s.load.scheme is Scheme.CUBIC_HERMITE
    assert s.load(1.0) == pytest.approx(2.0)
