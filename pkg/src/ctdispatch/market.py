"""Units, bids, load profiles and scenario JSON ingestion."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .trajectory import Horizon, Mesh, Scheme, Trajectory, from_samples


class IngestionError(ValueError):
    """Scenario input that violates the schema or a model invariant."""


class NondifferentiableError(ValueError):
    """Gradient requested at the kink of the absolute-ramp cost."""


DEFAULT_SLACK_PRICE = 10000.0


@dataclass(frozen=True)
class CostFunction:
    """Convex bid ``a0 + a1 x + a2 x^2 + b1 r + b2 r^2 + b_abs |r| + e1 z + e2 z^2``.

    x is power (MW), r its ramp (MW/h), z the energy delivered since t1 (MWh).
    """

    a0: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    b_abs: float = 0.0
    e1: float = 0.0
    e2: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise IngestionError(f"cost.{f.name} must be a finite number, got {v!r}")
        for name in ("a2", "b2", "e2", "b_abs"):
            if getattr(self, name) < 0:
                raise IngestionError(f"cost.{name} must be >= 0 for a convex bid")

    @property
    def has_energy(self) -> bool:
        return self.e1 != 0.0 or self.e2 != 0.0

    @property
    def has_ramp_cost(self) -> bool:
        return self.b1 != 0.0 or self.b2 != 0.0 or self.b_abs != 0.0

    def scaled(self, alpha: float) -> "CostFunction":
        return CostFunction(**{f.name: alpha * getattr(self, f.name) for f in fields(self)})


def cost_value(c: CostFunction, z, x, r):
    """Instantaneous cost rate in $/h."""
    return (
        c.a0
        + c.a1 * x
        + c.a2 * np.square(x)
        + c.b1 * r
        + c.b2 * np.square(r)
        + c.b_abs * np.abs(r)
        + c.e1 * z
        + c.e2 * np.square(z)
    )


def cost_gradients(c: CostFunction, z, x, r):
    """(dC/dz, dC/dx, dC/dr). Raises at r == 0 when the bid has an absolute-ramp term."""
    r_arr = np.asarray(r, dtype=float)
    if c.b_abs > 0 and np.any(r_arr == 0):
        raise NondifferentiableError(
            f"b_abs|r| is not differentiable at r=0; subgradient is "
            f"[{c.b1 - c.b_abs}, {c.b1 + c.b_abs}]"
        )
    dz = c.e1 + 2 * c.e2 * np.asarray(z, dtype=float)
    dx = c.a1 + 2 * c.a2 * np.asarray(x, dtype=float)
    dr = c.b1 + 2 * c.b2 * r_arr + c.b_abs * np.sign(r_arr)
    if np.ndim(z) == 0 and np.ndim(x) == 0 and np.ndim(r) == 0:
        return float(dz), float(dx), float(dr)
    return dz, dx, dr


@dataclass(frozen=True)
class Unit:
    id: str
    p_min: float
    p_max: float
    r_min: float = -math.inf
    r_max: float = math.inf
    z_max: float | None = None
    cost: CostFunction = field(default_factory=CostFunction)

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise IngestionError("unit id must be a non-empty string")
        for name in ("p_min", "p_max", "r_min", "r_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or math.isnan(v):
                raise IngestionError(f"unit {self.id}: {name} must be a number")
        if self.p_min > self.p_max:
            raise IngestionError(f"unit {self.id}: p_min > p_max ({self.p_min} > {self.p_max})")
        if self.r_min > self.r_max:
            raise IngestionError(f"unit {self.id}: r_min > r_max ({self.r_min} > {self.r_max})")
        if not (self.r_min <= 0 <= self.r_max):
            raise IngestionError(
                f"unit {self.id}: need r_min <= 0 <= r_max, got [{self.r_min}, {self.r_max}]"
            )
        if self.z_max is not None:
            if not math.isfinite(self.z_max):
                raise IngestionError(f"unit {self.id}: z_max must be finite or null")
            if self.p_min < 0:
                raise IngestionError(f"unit {self.id}: z_max requires p_min >= 0")

    @property
    def has_energy(self) -> bool:
        return self.cost.has_energy or self.z_max is not None


@dataclass(frozen=True)
class Slack:
    enabled: bool = True
    price: float = DEFAULT_SLACK_PRICE


@dataclass(frozen=True)
class DuckParams:
    base: float = 1000.0
    morning_peak: float = 300.0
    morning_center: float = 8.0
    morning_width: float = 1.5
    evening_peak: float = 700.0
    evening_center: float = 19.5
    evening_width: float = 2.0
    solar_depth: float = 550.0
    solar_center: float = 13.0
    solar_width: float = 2.5

    def __post_init__(self):
        for name in ("base", "morning_peak", "evening_peak", "solar_depth"):
            if getattr(self, name) < 0:
                raise IngestionError(f"duck.{name} must be >= 0")
        for name in ("morning_width", "evening_width", "solar_width"):
            if getattr(self, name) <= 0:
                raise IngestionError(f"duck.{name} must be > 0")


def duck_value(p: DuckParams, t):
    t = np.asarray(t, dtype=float)

    def bump(height, center, width):
        return height * np.exp(-0.5 * ((t - center) / width) ** 2)

    return (
        p.base
        + bump(p.morning_peak, p.morning_center, p.morning_width)
        + bump(p.evening_peak, p.evening_center, p.evening_width)
        - bump(p.solar_depth, p.solar_center, p.solar_width)
    )


def duck_curve(p: DuckParams, mesh: Mesh, scheme=Scheme.PIECEWISE_LINEAR) -> Trajectory:
    """Synthetic net load: base + two Gaussian peaks - a midday solar well."""
    hz = mesh.horizon
    if abs(hz.length - 24.0) > 1e-9:
        raise IngestionError(f"duck curve needs a 24 h horizon, got {hz.length} h")
    values = duck_value(p, mesh.knots)
    fine = duck_value(p, np.linspace(hz.t1, hz.t2, 24 * 60 + 1))
    if np.min(values) <= 0 or np.min(fine) <= 0:
        raise IngestionError("duck parameters give non-positive load")
    return from_samples(mesh, values, scheme)


@dataclass(frozen=True, eq=False)
class Scenario:
    horizon: Horizon
    load: Trajectory
    units: tuple[Unit, ...]
    slack: Slack = field(default_factory=Slack)
    # raw load description, kept so the scenario can be re-meshed and serialized
    load_spec: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.units:
            raise IngestionError("scenario needs at least one unit")
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise IngestionError("unit ids must be unique")
        if "slack" in ids:
            raise IngestionError("unit id 'slack' is reserved")
        object.__setattr__(self, "units", tuple(self.units))

    @property
    def K(self) -> int:
        return len(self.units)

    def load_on(self, mesh: Mesh, scheme) -> Trajectory:
        """Load expressed on ``mesh`` in ``scheme``."""
        from .trajectory import resample

        scheme = Scheme.parse(scheme)
        spec = self.load_spec
        if spec.get("kind") == "duck":
            return duck_curve(DuckParams(**spec.get("params", {})), mesh, scheme)
        if spec.get("kind") == "perturbed":
            base = spec["base"].load_on(mesh, scheme)
            eta = spec["eta"](mesh, scheme)
            return Trajectory(scheme, mesh, base.coeffs + spec["epsilon"] * eta.coeffs)
        if spec.get("kind") == "function":
            fn = spec["fn"]
            v = np.asarray(fn(mesh.knots), dtype=float)
            if scheme is Scheme.CUBIC_HERMITE and "dfn" in spec:
                d = np.asarray(spec["dfn"](mesh.knots), dtype=float)
                return Trajectory.hermite(mesh, v, d)
            return from_samples(mesh, v, scheme)
        if self.load.mesh is mesh and self.load.scheme is scheme:
            return self.load
        return resample(self.load, mesh, scheme)

    def perturbed(self, eta, epsilon: float) -> "Scenario":
        """Copy with load ``y + epsilon * eta``; ``eta(mesh, scheme)`` returns a Trajectory."""
        spec = {"kind": "perturbed", "base": self, "eta": eta, "epsilon": float(epsilon)}
        return replace(self, load_spec=spec)

    def with_units(self, units) -> "Scenario":
        return replace(self, units=tuple(units))

    def with_costs(self, fn) -> "Scenario":
        return self.with_units([replace(u, cost=fn(u.cost)) for u in self.units])

    def scaled(self, alpha: float) -> "Scenario":
        """All bids, slack price included, multiplied by ``alpha > 0``."""
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        out = self.with_costs(lambda c: c.scaled(alpha))
        return replace(out, slack=replace(self.slack, price=self.slack.price * alpha))


_TOP_KEYS = {"horizon", "load", "units", "slack"}
_UNIT_KEYS = {"id", "p_min", "p_max", "r_min", "r_max", "z_max", "cost"}
_COST_KEYS = {f.name for f in fields(CostFunction)}
_DUCK_KEYS = {f.name for f in fields(DuckParams)}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise IngestionError(f"{where} must be an object")
    extra = set(obj) - set(allowed)
    if extra:
        raise IngestionError(f"unknown key(s) in {where}: {sorted(extra)}")


def _num(obj, key, where, default=None, allow_null=False):
    if key not in obj:
        if default is None:
            raise IngestionError(f"missing {where}.{key}")
        return default
    v = obj[key]
    if v is None and allow_null:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise IngestionError(f"{where}.{key} must be a finite number, got {v!r}")
    return float(v)


def _bound(obj, key, where, default):
    # null means unbounded on that side
    if key in obj and obj[key] is None:
        return default
    return _num(obj, key, where, default=default)


def parse_unit(obj, n: int) -> Unit:
    where = f"units[{n}]"
    _reject_unknown(obj, _UNIT_KEYS, where)
    if "id" not in obj or not isinstance(obj["id"], str):
        raise IngestionError(f"{where}.id must be a string")
    cost_obj = obj.get("cost", {})
    _reject_unknown(cost_obj, _COST_KEYS, f"{where}.cost")
    cost = CostFunction(**{k: _num(cost_obj, k, f"{where}.cost", default=0.0) for k in _COST_KEYS})
    return Unit(
        id=obj["id"],
        p_min=_bound(obj, "p_min", where, -math.inf),
        p_max=_bound(obj, "p_max", where, math.inf),
        r_min=_bound(obj, "r_min", where, -math.inf),
        r_max=_bound(obj, "r_max", where, math.inf),
        z_max=_num(obj, "z_max", where, default=math.nan, allow_null=True) if "z_max" in obj else None,
        cost=cost,
    )


def parse_scenario(data: dict, scheme=Scheme.PIECEWISE_LINEAR) -> Scenario:
    _reject_unknown(data, _TOP_KEYS, "scenario")
    for key in ("horizon", "load", "units"):
        if key not in data:
            raise IngestionError(f"missing scenario.{key}")
    hz_obj = data["horizon"]
    _reject_unknown(hz_obj, {"t1", "t2"}, "horizon")
    try:
        horizon = Horizon(_num(hz_obj, "t1", "horizon"), _num(hz_obj, "t2", "horizon"))
    except ValueError as exc:
        raise IngestionError(str(exc)) from exc

    load_obj = data["load"]
    if not isinstance(load_obj, dict) or "kind" not in load_obj:
        raise IngestionError("load must be an object with a 'kind'")
    scheme = Scheme.parse(scheme)
    if load_obj["kind"] == "samples":
        _reject_unknown(load_obj, {"kind", "times", "values"}, "load")
        times = load_obj.get("times")
        values = load_obj.get("values")
        if not isinstance(times, list) or not isinstance(values, list):
            raise IngestionError("load.times and load.values must be arrays")
        if len(times) != len(values):
            raise IngestionError(
                f"load.values has {len(values)} samples but load.times has {len(times)}"
            )
        if len(times) < 2:
            raise IngestionError("load needs at least two samples")
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=float)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise IngestionError("load samples must be finite")
        if np.any(np.diff(t) <= 0):
            raise IngestionError("load.times must be strictly increasing")
        if abs(t[0] - horizon.t1) > 1e-9 or abs(t[-1] - horizon.t2) > 1e-9:
            raise IngestionError("load.times must span the horizon exactly")
        t[0], t[-1] = horizon.t1, horizon.t2
        mesh = Mesh.from_nodes(horizon, t)
        load = from_samples(mesh, v, scheme)
        load_spec = {"kind": "samples", "times": t.tolist(), "values": v.tolist()}
    elif load_obj["kind"] == "duck":
        _reject_unknown(load_obj, {"kind", "params"}, "load")
        params_obj = load_obj.get("params", {})
        _reject_unknown(params_obj, _DUCK_KEYS, "load.params")
        params = DuckParams(**{k: _num(params_obj, k, "load.params") for k in params_obj})
        mesh = Mesh.uniform(horizon, 24 * 12)
        load = duck_curve(params, mesh, scheme)
        load_spec = {"kind": "duck", "params": asdict(params)}
    else:
        raise IngestionError(f"unknown load.kind {load_obj['kind']!r}")

    units_obj = data["units"]
    if not isinstance(units_obj, list) or not units_obj:
        raise IngestionError("units must be a non-empty array")
    units = [parse_unit(u, n) for n, u in enumerate(units_obj)]

    slack_obj = data.get("slack", {})
    _reject_unknown(slack_obj, {"enabled", "price"}, "slack")
    enabled = slack_obj.get("enabled", True)
    if not isinstance(enabled, bool):
        raise IngestionError("slack.enabled must be a boolean")
    slack = Slack(enabled, _num(slack_obj, "price", "slack", default=DEFAULT_SLACK_PRICE))
    if slack.price <= 0:
        raise IngestionError("slack.price must be > 0")
    return Scenario(horizon, load, tuple(units), slack, load_spec)


def load_scenario(text, scheme=Scheme.PIECEWISE_LINEAR) -> Scenario:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestionError(f"scenario is not UTF-8: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"scenario is not valid JSON: {exc}") from exc
    return parse_scenario(data, scheme)


def _json_bound(v):
    return None if v is None or math.isinf(v) else v


def scenario_to_dict(s: Scenario) -> dict:
    spec = s.load_spec
    if spec.get("kind") in ("samples", "duck"):
        load = dict(spec)
    else:
        knots = s.load.mesh.knots
        load = {"kind": "samples", "times": knots.tolist(), "values": s.load(knots).tolist()}
    return {
        "horizon": {"t1": s.horizon.t1, "t2": s.horizon.t2},
        "load": load,
        "units": [
            {
                "id": u.id,
                "p_min": _json_bound(u.p_min),
                "p_max": _json_bound(u.p_max),
                "r_min": _json_bound(u.r_min),
                "r_max": _json_bound(u.r_max),
                "z_max": u.z_max,
                "cost": asdict(u.cost),
            }
            for u in s.units
        ],
        "slack": {"enabled": s.slack.enabled, "price": s.slack.price},
    }


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2, sort_keys=True) + "\n"


def function_scenario(horizon: Horizon, fn, units, slack=None, dfn=None, label="function") -> Scenario:
    """Scenario whose load is a Python callable, sampled on whatever mesh a solve uses.

    ``dfn`` (the load derivative) lets the spline scheme represent the load exactly.
    """
    mesh = Mesh.uniform(horizon, 64)
    load = from_samples(mesh, np.asarray(fn(mesh.knots), dtype=float))
    spec = {"kind": "function", "fn": fn, "label": label}
    if dfn is not None:
        spec["dfn"] = dfn
    return Scenario(horizon, load, tuple(units), slack or Slack(), spec)
