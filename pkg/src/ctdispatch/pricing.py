"""Multiplier recovery, marginal units and closed-form price formulas."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market import Scenario
from .qp import QpSolution
from .transcribe import DualMap, RowKind, Schedule
from .trajectory import Scheme, centered_derivative, derivative, integrate


class PricingError(ValueError):
    pass


@dataclass(eq=False)
class UnitMultipliers:
    id: str
    bound_times: np.ndarray  # samples of mu_hi, mu_lo, beta_hi
    mu_hi: np.ndarray
    mu_lo: np.ndarray
    beta_hi: np.ndarray
    ramp_times: np.ndarray  # samples of gamma_hi, gamma_lo and the ramp subgradient
    gamma_hi: np.ndarray
    gamma_lo: np.ndarray
    ramp_subgradient: np.ndarray | None  # realized d(b_abs|r|)/dr from the split rows
    dgamma_hi_dt: np.ndarray  # at nodes
    dgamma_lo_dt: np.ndarray


@dataclass(eq=False)
class MultiplierTrajectories:
    scheme: Scheme
    times: np.ndarray  # knot times, where lambda lives
    weights: np.ndarray
    lambda_: np.ndarray
    units: dict[str, UnitMultipliers]
    slack: UnitMultipliers | None = None
    quadrature: str = "trapezoid"

    def node_values(self, unit: str, name: str) -> np.ndarray:
        """Multiplier ``name`` of ``unit`` interpolated to the knot times."""
        um = self.units[unit] if unit != "slack" else self.slack
        if name in ("dgamma_hi_dt", "dgamma_lo_dt"):
            return getattr(um, name)
        if name in ("gamma_hi", "gamma_lo"):
            return np.interp(self.times, um.ramp_times, getattr(um, name))
        return np.interp(self.times, um.bound_times, getattr(um, name))

    def near_node_max(self, unit: str) -> np.ndarray:
        """Largest own multiplier within half an interval of each node."""
        um = self.units[unit]
        h = np.max(np.diff(self.times))
        out = np.zeros(self.times.size)
        for i, t in enumerate(self.times):
            b = np.abs(um.bound_times - t) <= 0.5 * h + 1e-12
            r = np.abs(um.ramp_times - t) <= 0.5 * h + 1e-12
            vals = [um.mu_hi[b], um.mu_lo[b], um.beta_hi[b], um.gamma_hi[r], um.gamma_lo[r]]
            out[i] = max((float(np.max(v)) for v in vals if v.size), default=0.0)
        return out


def recover_multipliers(sol: QpSolution, dmap: DualMap) -> MultiplierTrajectories:
    if not sol.optimal:
        raise PricingError(f"refusing to price a {sol.status.value} solution")
    mesh = dmap.mesh
    lam = np.zeros(mesh.knots.size)
    bound_times = dmap.colloc.nodes
    ramp_times = dmap.ramp_times
    nb, nr = bound_times.size, ramp_times.size
    store = []
    for lay in dmap.units:
        store.append(
            {
                "mu_hi": np.zeros(nb),
                "mu_lo": np.zeros(nb),
                "beta_hi": np.zeros(nb),
                "gamma_hi": np.zeros(nr),
                "gamma_lo": np.zeros(nr),
                "split": np.zeros(nr) if lay.rp is not None else None,
            }
        )
    for val, tag in zip(sol.nu, dmap.eq):
        if tag.kind is RowKind.BALANCE:
            lam[tag.index] = val / tag.weight
        elif tag.kind is RowKind.RAMP_SPLIT:
            store[tag.unit]["split"][tag.index] = val / tag.weight
    target = {
        RowKind.P_MAX: "mu_hi",
        RowKind.P_MIN: "mu_lo",
        RowKind.Z_MAX: "beta_hi",
        RowKind.R_MAX: "gamma_hi",
        RowKind.R_MIN: "gamma_lo",
    }
    for val, tag in zip(sol.omega, dmap.ineq):
        name = target.get(tag.kind)
        if name is not None:
            store[tag.unit][name][tag.index] = val / tag.weight
    units = {}
    slack = None
    for k, (lay, st) in enumerate(zip(dmap.units, store)):
        um = UnitMultipliers(
            id=lay.unit.id,
            bound_times=bound_times,
            mu_hi=st["mu_hi"],
            mu_lo=st["mu_lo"],
            beta_hi=st["beta_hi"],
            ramp_times=ramp_times,
            gamma_hi=st["gamma_hi"],
            gamma_lo=st["gamma_lo"],
            ramp_subgradient=st["split"],
            dgamma_hi_dt=centered_derivative(ramp_times, st["gamma_hi"], mesh.knots),
            dgamma_lo_dt=centered_derivative(ramp_times, st["gamma_lo"], mesh.knots),
        )
        if k == dmap.n_units:
            slack = um
        else:
            units[lay.unit.id] = um
    quad = "simpson" if dmap.scheme is Scheme.CUBIC_HERMITE else "trapezoid"
    return MultiplierTrajectories(dmap.scheme, mesh.knots.copy(), mesh.weights.copy(), lam, units, slack, quad)


def price_from_duals(m: MultiplierTrajectories) -> np.ndarray:
    return m.lambda_.copy()


def default_marginal_tol(m: MultiplierTrajectories) -> float:
    samples = []
    for um in m.units.values():
        samples.extend([um.mu_hi, um.mu_lo, um.beta_hi, um.gamma_hi, um.gamma_lo])
    allv = np.abs(np.concatenate(samples)) if samples else np.zeros(0)
    if allv.size == 0:
        return 1e-6
    active = allv[allv > 1e-5 * (1.0 + np.max(allv))]
    med = float(np.median(active)) if active.size else 0.0
    return 1e-6 * (med + 1.0)


def marginal_units(m: MultiplierTrajectories, tol: float | None = None, scale: float = 1.0) -> list[list[str]]:
    """Per node, ids of units with no binding own constraint."""
    if tol is None:
        tol = default_marginal_tol(m)
    near = {uid: m.near_node_max(uid) for uid in m.units}
    out = []
    for i in range(m.times.size):
        members = []
        for uid, um in m.units.items():
            if near[uid][i] > tol:
                continue
            if abs(um.dgamma_hi_dt[i]) > tol * scale or abs(um.dgamma_lo_dt[i]) > tol * scale:
                continue
            members.append(uid)
        out.append(members)
    return out


def _cumulative(times, values, quadrature: str) -> np.ndarray:
    """``int_{times[0]}^{times[i]} values`` at every sample."""
    values = np.asarray(values, dtype=float)
    if quadrature == "simpson":
        # samples are knot, midpoint, knot, ...; returns one entry per knot
        h = times[2::2] - times[:-2:2]
        seg = h / 6 * (values[:-2:2] + 4 * values[1::2] + values[2::2])
        return np.concatenate([[0.0], np.cumsum(seg)])
    seg = np.diff(times) * 0.5 * (values[1:] + values[:-1])
    return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(eq=False)
class UnitPriceTerms:
    """Components of the price decomposition for one unit at the knot times."""

    marginal_cost: np.ndarray  # dC/dx
    mu_net: np.ndarray  # mu_hi - mu_lo
    dgamma_net: np.ndarray  # -dgamma_hi/dt + dgamma_lo/dt
    ramp_bid: np.ndarray  # -d/dt dC/dxdot
    energy_from_start: np.ndarray  # -int_{t1}^{t} (dC/dz + beta_hi)
    energy_to_end: np.ndarray  # +int_{t}^{t2} (dC/dz + beta_hi)
    energy_bid_from_start: np.ndarray  # -int_{t1}^{t} dC/dz (no beta)
    kinks: list[int] = field(default_factory=list)

    @property
    def lambda_hat(self) -> np.ndarray:
        """Decomposition with the energy integral anchored at t1."""
        return self.marginal_cost + self.mu_net + self.dgamma_net + self.ramp_bid + self.energy_from_start

    @property
    def lambda_hat_terminal(self) -> np.ndarray:
        """Decomposition with the energy integral taken over [t, t2]."""
        return self.marginal_cost + self.mu_net + self.dgamma_net + self.ramp_bid + self.energy_to_end

    @property
    def closed_form(self) -> np.ndarray:
        """Multiplier-free price of a marginal unit (dC/dx - d/dt dC/dxdot - int_{t1}^t dC/dz)."""
        return self.marginal_cost + self.ramp_bid + self.energy_bid_from_start


def unit_price_terms(s: Scenario, sched: Schedule, m: MultiplierTrajectories, uid: str) -> UnitPriceTerms:
    unit = next(u for u in s.units if u.id == uid)
    c = unit.cost
    um = m.units[uid]
    t = m.times
    x = sched.x[uid]
    xv = x(t)
    marginal = c.a1 + 2 * c.a2 * xv
    mu_net = np.interp(t, um.bound_times, um.mu_hi - um.mu_lo)
    dgamma = -um.dgamma_hi_dt + um.dgamma_lo_dt

    # dC/dxdot sampled where the ramp lives
    rt = um.ramp_times
    if m.scheme is Scheme.PIECEWISE_LINEAR:
        slope = np.diff(xv) / np.diff(t)
    else:
        slope = derivative(x)(rt)
    dcdr = c.b1 + 2 * c.b2 * slope
    kinks = []
    if c.b_abs:
        if um.ramp_subgradient is not None:
            dcdr = dcdr + um.ramp_subgradient
        else:
            dcdr = dcdr + c.b_abs * np.sign(slope)
        flat = np.abs(slope) <= 1e-7 * (1.0 + np.max(np.abs(slope)))
        h = np.max(np.diff(t))
        for i, ti in enumerate(t):
            if np.any(flat & (np.abs(rt - ti) <= 0.5 * h + 1e-12)):
                kinks.append(i)
    ramp_bid = -centered_derivative(rt, dcdr, t) if c.has_ramp_cost else np.zeros(t.size)

    zero = np.zeros(t.size)
    if uid in sched.z:
        bt = um.bound_times
        zb = sched.z[uid](bt)
        cz = c.e1 + 2 * c.e2 * zb
        cum_c = _cumulative(bt, cz, m.quadrature)
        cum_all = _cumulative(bt, cz + um.beta_hi, m.quadrature)
        e_start = -cum_all
        e_end = cum_all[-1] - cum_all
        e_bid = -cum_c
    else:
        e_start = e_end = e_bid = zero
    return UnitPriceTerms(marginal, mu_net, dgamma, ramp_bid, e_start, e_end, e_bid, kinks)


@dataclass(eq=False)
class PriceReport:
    times: np.ndarray
    lambda_dual: np.ndarray
    lambda_formula: np.ndarray  # closed form of the first marginal unit, NaN if none
    marginal_set: list[list[str]]
    residual: np.ndarray  # max over marginal units of |lambda_dual - closed form|
    lambda_hat: dict[str, np.ndarray]
    lambda_hat_terminal: dict[str, np.ndarray]
    identity_residual: dict[str, np.ndarray]  # |lambda_dual - lambda_hat|
    identity_residual_terminal: dict[str, np.ndarray]
    energy_anchor_offset: dict[str, float]
    kinks: dict[str, list[dict]]
    tol: float

    def to_dict(self) -> dict:
        def arr(v):
            return [None if not math.isfinite(float(a)) else float(a) for a in v]

        return {
            "times": arr(self.times),
            "lambda_dual": arr(self.lambda_dual),
            "lambda_formula": arr(self.lambda_formula),
            "marginal_set": self.marginal_set,
            "residual": arr(self.residual),
            "lambda_hat": {k: arr(v) for k, v in self.lambda_hat.items()},
            "lambda_hat_terminal": {k: arr(v) for k, v in self.lambda_hat_terminal.items()},
            "identity_residual_max": {k: float(np.max(v)) for k, v in self.identity_residual.items()},
            "identity_residual_terminal_max": {
                k: float(np.max(v)) for k, v in self.identity_residual_terminal.items()
            },
            "energy_anchor_offset": self.energy_anchor_offset,
            "kinks": self.kinks,
            "marginal_tol": self.tol,
        }


def price_formula(
    s: Scenario, sched: Schedule, m: MultiplierTrajectories, tol: float | None = None
) -> PriceReport:
    if tol is None:
        tol = default_marginal_tol(m)
    lam = price_from_duals(m)
    mset = marginal_units(m, tol)
    terms = {u.id: unit_price_terms(s, sched, m, u.id) for u in s.units}
    formula = np.full(lam.size, np.nan)
    resid = np.full(lam.size, np.nan)
    for i, members in enumerate(mset):
        if not members:
            continue
        formula[i] = terms[members[0]].closed_form[i]
        resid[i] = max(abs(lam[i] - terms[k].closed_form[i]) for k in members)
    kinks = {}
    for uid, tm in terms.items():
        if tm.kinks:
            c = next(u for u in s.units if u.id == uid).cost
            kinks[uid] = [
                {"node": i, "time": float(m.times[i]), "subgradient": [c.b1 - c.b_abs, c.b1 + c.b_abs]}
                for i in tm.kinks
            ]
    return PriceReport(
        times=m.times,
        lambda_dual=lam,
        lambda_formula=formula,
        marginal_set=mset,
        residual=resid,
        lambda_hat={k: v.lambda_hat for k, v in terms.items()},
        lambda_hat_terminal={k: v.lambda_hat_terminal for k, v in terms.items()},
        identity_residual={k: np.abs(lam - v.lambda_hat) for k, v in terms.items()},
        identity_residual_terminal={k: np.abs(lam - v.lambda_hat_terminal) for k, v in terms.items()},
        energy_anchor_offset={
            k: float(v.energy_to_end[0] - v.energy_from_start[0]) for k, v in terms.items()
        },
        kinks=kinks,
        tol=tol,
    )


@dataclass(eq=False)
class EulerLagrangeReport:
    times: np.ndarray
    residual: dict[str, np.ndarray]
    # value of dC/dxdot + gamma_hi - gamma_lo at the last ramp sample
    terminal_df_dxdot: dict[str, float]
    # dgamma_hi/dt - dgamma_lo/dt at t2, the form the boundary condition is usually quoted in
    terminal_dgamma: dict[str, float]

    def max_interior(self) -> dict[str, float]:
        return {k: float(np.max(np.abs(v[1:-1]))) for k, v in self.residual.items()}


def euler_lagrange_residual(s: Scenario, sched: Schedule, m: MultiplierTrajectories) -> EulerLagrangeReport:
    """``df/dx - d/dt df/dxdot`` per unit, energy terms in integro-differential form over [t, t2]."""
    lam = m.lambda_
    res, term_f, term_g = {}, {}, {}
    for u in s.units:
        tm = unit_price_terms(s, sched, m, u.id)
        res[u.id] = tm.lambda_hat_terminal - lam
        um = m.units[u.id]
        c = u.cost
        x = sched.x[u.id]
        if m.scheme is Scheme.PIECEWISE_LINEAR:
            last_slope = float((x(m.times[-1]) - x(m.times[-2])) / (m.times[-1] - m.times[-2]))
        else:
            last_slope = float(derivative(x)(m.times[-1]))
        dcdr = c.b1 + 2 * c.b2 * last_slope
        if c.b_abs:
            dcdr += float(um.ramp_subgradient[-1]) if um.ramp_subgradient is not None else c.b_abs * np.sign(last_slope)
        term_f[u.id] = float(dcdr + um.gamma_hi[-1] - um.gamma_lo[-1])
        term_g[u.id] = float(um.dgamma_hi_dt[-1] - um.dgamma_lo_dt[-1])
    return EulerLagrangeReport(m.times, res, term_f, term_g)


def aggregate_hourly(sched: Schedule, include_slack: bool = True) -> dict[str, np.ndarray]:
    """Hourly energies ``int_{hour h} x_k(t) dt`` for every unit (and the slack unit)."""
    any_traj = next(iter(sched.x.values()))
    hz = any_traj.horizon
    hours = hz.length
    if abs(hours - round(hours)) > 1e-9:
        raise PricingError(f"horizon of {hours} h is not a whole number of hours")
    H = int(round(hours))
    trajs = dict(sched.x)
    if include_slack and sched.slack is not None:
        trajs["slack"] = sched.slack
    out = {}
    for uid, tr in trajs.items():
        out[uid] = np.array([integrate(tr, hz.t1 + h, min(hz.t1 + h + 1, hz.t2)) for h in range(H)])
    return out
