"""Collocation transcription of the continuous-time dispatch into a convex QP.

Row conventions (all rows unscaled, so ``dual / weight`` is the multiplier sample):

* balance ``y_i - sum_k x_{k,i} = 0`` written as ``-sum_k x_{k,i} = -y_i``
* bounds ``g(u) <= h`` with nonnegative duals
* Lagrangian ``1/2 u'Hu + c'u + nu'(Au - b) + omega'(Gu - h)``
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .market import CostFunction, Scenario, Unit, cost_value
from .trajectory import (
    Mesh,
    Scheme,
    Trajectory,
    cumulative_integral,
    derivative,
    gauss_rule,
    hermite_basis,
)


class TranscriptionError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """Recomputed objective disagrees with the QP objective."""


class RowKind(str, enum.Enum):
    BALANCE = "balance"
    BALANCE_RATE = "balance_rate"
    ENERGY_INIT = "energy_init"
    ENERGY_LINK = "energy_link"
    RAMP_SPLIT = "ramp_split"
    P_MAX = "p_max"
    P_MIN = "p_min"
    R_MAX = "r_max"
    R_MIN = "r_min"
    Z_MAX = "z_max"
    SPLIT_NONNEG = "split_nonneg"


@dataclass(frozen=True)
class RowTag:
    kind: RowKind
    unit: int  # -1 for system-wide rows; K for the slack unit
    index: int  # node, interval or collocation-point index
    time: float
    weight: float


@dataclass(eq=False)
class QpProblem:
    H: sp.csc_matrix
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = self.c.size
        self.H = sp.csc_matrix(self.H, shape=(n, n))
        self.A = sp.csr_matrix(self.A, shape=(self.b.size, n))
        self.G = sp.csr_matrix(self.G, shape=(self.h.size, n))

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, u) -> float:
        return float(0.5 * u @ (self.H @ u) + self.c @ u + self.offset)

    def validate(self, shift: float = 1e-9) -> None:
        n = self.n
        for name, m, rows in (("A", self.A, self.b.size), ("G", self.G, self.h.size)):
            if m.shape != (rows, n):
                raise TranscriptionError(f"{name} has shape {m.shape}, expected {(rows, n)}")
        if n == 0:
            return
        asym = abs(self.H - self.H.T)
        scale = max(1.0, abs(self.H).max() if self.H.nnz else 0.0)
        if asym.nnz and asym.max() > 1e-12 * scale:
            raise TranscriptionError("H is not symmetric")
        dense = self.H.toarray() + shift * scale * np.eye(n)
        try:
            np.linalg.cholesky(dense)
        except np.linalg.LinAlgError as exc:
            raise TranscriptionError("H is not positive semidefinite") from exc


@dataclass(eq=False)
class UnitLayout:
    unit: Unit
    x: np.ndarray
    d: np.ndarray | None = None  # Hermite node slopes
    z: np.ndarray | None = None  # node energies
    rp: np.ndarray | None = None  # ramp split r+
    rm: np.ndarray | None = None  # ramp split r-


@dataclass(eq=False)
class DualMap:
    scheme: Scheme
    mesh: Mesh  # knot mesh, trapezoid weights
    colloc: Mesh  # points carrying bound/ramp multipliers
    ramp_times: np.ndarray  # where ramp multipliers live
    eq: list[RowTag]
    ineq: list[RowTag]
    units: list[UnitLayout]  # scenario units then (optionally) the slack unit
    n_units: int  # number of scenario units K
    load: Trajectory = field(repr=False, default=None)

    @property
    def slack(self) -> UnitLayout | None:
        return self.units[self.n_units] if len(self.units) > self.n_units else None


@dataclass(eq=False)
class Schedule:
    x: dict[str, Trajectory]
    z: dict[str, Trajectory]
    objective: float
    slack: Trajectory | None = None
    u: np.ndarray | None = field(default=None, repr=False)

    def power_at(self, t) -> dict[str, np.ndarray]:
        return {k: v(t) for k, v in self.x.items()}


class _Builder:
    def __init__(self):
        self.n = 0
        self.c: list[float] = []
        self.H_rows: list[np.ndarray] = []
        self.H_cols: list[np.ndarray] = []
        self.H_vals: list[np.ndarray] = []
        self.eq = _Rows()
        self.ineq = _Rows()
        self.offset = 0.0

    def var(self, count: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + count)
        self.n += count
        self.c.extend([0.0] * count)
        return idx

    def lin(self, cols, vals):
        for j, v in zip(np.atleast_1d(cols), np.atleast_1d(vals)):
            self.c[int(j)] += float(v)

    def quad(self, cols, M):
        """Add ``1/2 u_cols' M u_cols`` to the objective."""
        cols = np.asarray(cols)
        M = np.asarray(M, dtype=float)
        rr, cc = np.meshgrid(cols, cols, indexing="ij")
        self.H_rows.append(rr.ravel())
        self.H_cols.append(cc.ravel())
        self.H_vals.append(M.ravel())

    def build(self):
        n = self.n
        if self.H_rows:
            H = sp.coo_matrix(
                (np.concatenate(self.H_vals), (np.concatenate(self.H_rows), np.concatenate(self.H_cols))),
                shape=(n, n),
            ).tocsc()
            H = (H + H.T) * 0.5
        else:
            H = sp.csc_matrix((n, n))
        A, b = self.eq.matrix(n)
        G, h = self.ineq.matrix(n)
        return QpProblem(H, np.asarray(self.c), A, b, G, h, self.offset)


class _Rows:
    def __init__(self):
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.tags: list[RowTag] = []

    def add(self, cols, vals, rhs, tag: RowTag):
        self.cols.append(np.asarray(cols, dtype=int).ravel())
        self.vals.append(np.asarray(vals, dtype=float).ravel())
        self.rhs.append(float(rhs))
        self.tags.append(tag)

    def matrix(self, n):
        m = len(self.rhs)
        if m == 0:
            return sp.csr_matrix((0, n)), np.zeros(0)
        rows = np.concatenate([np.full(c.size, i) for i, c in enumerate(self.cols)])
        M = sp.coo_matrix((np.concatenate(self.vals), (rows, np.concatenate(self.cols))), shape=(m, n))
        return M.tocsr(), np.asarray(self.rhs)


def _slack_unit(s: Scenario, ymax: float) -> Unit:
    return Unit(
        id="slack",
        p_min=0.0,
        p_max=max(ymax, 1.0),
        cost=CostFunction(a1=s.slack.price),
    )


def _check_capacity(s: Scenario, y_samples: np.ndarray):
    if s.slack.enabled:
        return
    cap = sum(u.p_max for u in s.units)
    floor = sum(u.p_min for u in s.units)
    if cap < np.max(y_samples) - 1e-9:
        raise TranscriptionError(
            f"infeasible: sum of p_max ({cap}) < max load ({np.max(y_samples)}) with slack disabled"
        )
    if floor > np.min(y_samples) + 1e-9:
        raise TranscriptionError(
            f"infeasible: sum of p_min ({floor}) > min load ({np.min(y_samples)}) with slack disabled"
        )


def transcribe(s: Scenario, scheme=Scheme.PIECEWISE_LINEAR, intervals: int = 100, mesh: Mesh | None = None):
    """Return ``(QpProblem, DualMap)`` for scenario ``s``."""
    scheme = Scheme.parse(scheme)
    if scheme not in (Scheme.PIECEWISE_LINEAR, Scheme.CUBIC_HERMITE):
        raise TranscriptionError(f"cannot transcribe with scheme {scheme.name}")
    if mesh is None:
        if int(intervals) != intervals or intervals < 2:
            raise TranscriptionError(f"intervals must be an integer >= 2, got {intervals}")
        mesh = Mesh.uniform(s.horizon, int(intervals))
    elif mesh.intervals < 2:
        raise TranscriptionError("mesh needs at least 2 intervals")
    load = s.load_on(mesh, scheme)
    if scheme is Scheme.PIECEWISE_LINEAR:
        return _transcribe_linear(s, mesh, load)
    return _transcribe_hermite(s, mesh, load)


def _ramp_cost_parts(c: CostFunction):
    return c.b1, c.b2, c.b_abs


def _transcribe_linear(s: Scenario, mesh: Mesh, load: Trajectory):
    B = _Builder()
    t = mesh.knots
    w = mesh.weights
    dt = mesh.steps
    mid = mesh.midpoints
    N = mesh.intervals
    y = load(t)
    _check_capacity(s, y)
    units = list(s.units)
    if s.slack.enabled:
        units.append(_slack_unit(s, float(np.max(y))))
    K = s.K
    layouts = []
    for k, u in enumerate(units):
        is_slack = k == K
        c = u.cost
        lay = UnitLayout(u, B.var(N + 1))
        x = lay.x
        # power cost, trapezoid
        B.lin(x, w * c.a1)
        if c.a2:
            B.quad(x, np.diag(2 * c.a2 * w))
        B.offset += c.a0 * s.horizon.length
        # ramp cost on intervals; s_j = (x_{j+1} - x_j) / dt_j
        if c.b1:
            B.lin(x[1:], np.full(N, c.b1))
            B.lin(x[:-1], np.full(N, -c.b1))
        if c.b2:
            for j in range(N):
                q = 2 * c.b2 / dt[j]
                B.quad([x[j], x[j + 1]], [[q, -q], [-q, q]])
        if c.b_abs:
            lay.rp = B.var(N)
            lay.rm = B.var(N)
            B.lin(lay.rp, dt * c.b_abs)
            B.lin(lay.rm, dt * c.b_abs)
            for j in range(N):
                B.eq.add(
                    [x[j], x[j + 1], lay.rp[j], lay.rm[j]],
                    [-1 / dt[j], 1 / dt[j], -1.0, 1.0],
                    0.0,
                    RowTag(RowKind.RAMP_SPLIT, k, j, mid[j], dt[j]),
                )
                B.ineq.add([lay.rp[j]], [-1.0], 0.0, RowTag(RowKind.SPLIT_NONNEG, k, j, mid[j], dt[j]))
                B.ineq.add([lay.rm[j]], [-1.0], 0.0, RowTag(RowKind.SPLIT_NONNEG, k, j, mid[j], dt[j]))
        # energy
        if u.has_energy and not is_slack:
            lay.z = B.var(N + 1)
            z = lay.z
            B.lin(z, w * c.e1)
            if c.e2:
                B.quad(z, np.diag(2 * c.e2 * w))
            B.eq.add([z[0]], [1.0], 0.0, RowTag(RowKind.ENERGY_INIT, k, 0, t[0], 1.0))
            for j in range(N):
                B.eq.add(
                    [z[j + 1], z[j], x[j], x[j + 1]],
                    [1.0, -1.0, -dt[j] / 2, -dt[j] / 2],
                    0.0,
                    RowTag(RowKind.ENERGY_LINK, k, j, mid[j], dt[j]),
                )
            if u.z_max is not None:
                for i in range(N + 1):
                    B.ineq.add([z[i]], [1.0], u.z_max, RowTag(RowKind.Z_MAX, k, i, t[i], w[i]))
        # power bounds at nodes
        for i in range(N + 1):
            if math.isfinite(u.p_max):
                B.ineq.add([x[i]], [1.0], u.p_max, RowTag(RowKind.P_MAX, k, i, t[i], w[i]))
            if math.isfinite(u.p_min):
                B.ineq.add([x[i]], [-1.0], -u.p_min, RowTag(RowKind.P_MIN, k, i, t[i], w[i]))
        # ramp bounds on intervals
        for j in range(N):
            if math.isfinite(u.r_max):
                B.ineq.add(
                    [x[j], x[j + 1]], [-1 / dt[j], 1 / dt[j]], u.r_max, RowTag(RowKind.R_MAX, k, j, mid[j], dt[j])
                )
            if math.isfinite(u.r_min):
                B.ineq.add(
                    [x[j], x[j + 1]], [1 / dt[j], -1 / dt[j]], -u.r_min, RowTag(RowKind.R_MIN, k, j, mid[j], dt[j])
                )
        layouts.append(lay)
    for i in range(N + 1):
        cols = [lay.x[i] for lay in layouts]
        B.eq.add(cols, -np.ones(len(cols)), -y[i], RowTag(RowKind.BALANCE, -1, i, t[i], w[i]))
    qp = B.build()
    qp.validate()
    dmap = DualMap(Scheme.PIECEWISE_LINEAR, mesh, mesh, mid, B.eq.tags, B.ineq.tags, layouts, K, load)
    return qp, dmap


def _hermite_local(h: float, s, kind: int) -> np.ndarray:
    """Rows of coefficients on (x_a, d_a, x_b, d_b) for value (0), slope (1) or integral (-1) at s."""
    basis = hermite_basis(s, kind).T  # (len(s), 4)
    scale = np.array([1.0, h, 1.0, h])
    out = basis * scale
    if kind == 1:
        out = out / h
    elif kind == -1:
        out = out * h
    return out


def _colloc_location(colloc: Mesh, knots: np.ndarray):
    """(interval index, local coordinate) of every collocation point."""
    j = np.clip(np.searchsorted(knots, colloc.nodes, side="right") - 1, 0, knots.size - 2)
    h = np.diff(knots)[j]
    svals = (colloc.nodes - knots[j]) / h
    return j, np.clip(svals, 0.0, 1.0)


def _transcribe_hermite(s: Scenario, mesh: Mesh, load: Trajectory, gauss_points: int = 5):
    B = _Builder()
    t = mesh.knots
    w = mesh.weights
    hs = mesh.steps
    N = mesh.intervals
    colloc = Mesh.lobatto(s.horizon, t, 3)
    pj, ps = _colloc_location(colloc, t)
    W = colloc.weights
    y = load(t)
    ydot = derivative(load)(t)
    _check_capacity(s, load(colloc.nodes))
    units = list(s.units)
    if s.slack.enabled:
        units.append(_slack_unit(s, float(np.max(load(colloc.nodes)))))
    K = s.K
    gx, gw = gauss_rule(gauss_points)
    layouts = []
    for k, u in enumerate(units):
        is_slack = k == K
        c = u.cost
        lay = UnitLayout(u, B.var(N + 1), B.var(N + 1))
        x, d = lay.x, lay.d
        has_z = u.has_energy and not is_slack
        if has_z:
            lay.z = B.var(N + 1)
        B.offset += c.a0 * s.horizon.length
        for j in range(N):
            h = hs[j]
            loc = np.array([x[j], d[j], x[j + 1], d[j + 1]])
            V = _hermite_local(h, gx, 0)
            D = _hermite_local(h, gx, 1)
            qw = h * gw
            B.lin(loc, c.a1 * (qw @ V) + c.b1 * (qw @ D))
            M = 2 * c.a2 * (V.T * qw) @ V + 2 * c.b2 * (D.T * qw) @ D
            if np.any(M):
                B.quad(loc, M)
            if has_z:
                E = np.hstack([np.ones((gx.size, 1)), _hermite_local(h, gx, -1)])
                eloc = np.concatenate([[lay.z[j]], loc])
                B.lin(eloc, c.e1 * (qw @ E))
                if c.e2:
                    B.quad(eloc, 2 * c.e2 * (E.T * qw) @ E)
        if has_z:
            z = lay.z
            B.eq.add([z[0]], [1.0], 0.0, RowTag(RowKind.ENERGY_INIT, k, 0, t[0], 1.0))
            for j in range(N):
                row = _hermite_local(hs[j], [1.0], -1)[0]
                B.eq.add(
                    [z[j + 1], z[j], x[j], d[j], x[j + 1], d[j + 1]],
                    np.concatenate([[1.0, -1.0], -row]),
                    0.0,
                    RowTag(RowKind.ENERGY_LINK, k, j, 0.5 * (t[j] + t[j + 1]), hs[j]),
                )
        if c.b_abs:
            lay.rp = B.var(colloc.size)
            lay.rm = B.var(colloc.size)
            B.lin(lay.rp, W * c.b_abs)
            B.lin(lay.rm, W * c.b_abs)
        for p in range(colloc.size):
            j, sv, tp = pj[p], ps[p], colloc.nodes[p]
            h = hs[j]
            loc = [x[j], d[j], x[j + 1], d[j + 1]]
            val = _hermite_local(h, [sv], 0)[0]
            slope = _hermite_local(h, [sv], 1)[0]
            if math.isfinite(u.p_max):
                B.ineq.add(loc, val, u.p_max, RowTag(RowKind.P_MAX, k, p, tp, W[p]))
            if math.isfinite(u.p_min):
                B.ineq.add(loc, -val, -u.p_min, RowTag(RowKind.P_MIN, k, p, tp, W[p]))
            if math.isfinite(u.r_max):
                B.ineq.add(loc, slope, u.r_max, RowTag(RowKind.R_MAX, k, p, tp, W[p]))
            if math.isfinite(u.r_min):
                B.ineq.add(loc, -slope, -u.r_min, RowTag(RowKind.R_MIN, k, p, tp, W[p]))
            if c.b_abs:
                B.eq.add(
                    loc + [lay.rp[p], lay.rm[p]],
                    np.concatenate([slope, [-1.0, 1.0]]),
                    0.0,
                    RowTag(RowKind.RAMP_SPLIT, k, p, tp, W[p]),
                )
                B.ineq.add([lay.rp[p]], [-1.0], 0.0, RowTag(RowKind.SPLIT_NONNEG, k, p, tp, W[p]))
                B.ineq.add([lay.rm[p]], [-1.0], 0.0, RowTag(RowKind.SPLIT_NONNEG, k, p, tp, W[p]))
            if has_z and u.z_max is not None:
                zrow = _hermite_local(h, [sv], -1)[0]
                B.ineq.add(
                    [lay.z[j]] + loc, np.concatenate([[1.0], zrow]), u.z_max, RowTag(RowKind.Z_MAX, k, p, tp, W[p])
                )
        layouts.append(lay)
    for i in range(N + 1):
        xs = [lay.x[i] for lay in layouts]
        ds = [lay.d[i] for lay in layouts]
        B.eq.add(xs, -np.ones(len(xs)), -y[i], RowTag(RowKind.BALANCE, -1, i, t[i], w[i]))
        B.eq.add(ds, -np.ones(len(ds)), -ydot[i], RowTag(RowKind.BALANCE_RATE, -1, i, t[i], w[i]))
    qp = B.build()
    qp.validate()
    dmap = DualMap(Scheme.CUBIC_HERMITE, mesh, colloc, colloc.nodes, B.eq.tags, B.ineq.tags, layouts, K, load)
    return qp, dmap


def _unit_trajectories(u: np.ndarray, dmap: DualMap, lay: UnitLayout):
    mesh = dmap.mesh
    if dmap.scheme is Scheme.PIECEWISE_LINEAR:
        x = Trajectory.linear(mesh, u[lay.x])
    else:
        x = Trajectory.hermite(mesh, u[lay.x], u[lay.d])
    z = None
    if lay.z is not None:
        if dmap.scheme is Scheme.PIECEWISE_LINEAR:
            z = Trajectory.linear(mesh, u[lay.z])
        else:
            z = Trajectory.hermite(mesh, u[lay.z], u[lay.x])
    return x, z


def integrated_cost(dmap: DualMap, lay: UnitLayout, x: Trajectory, horizon_length: float) -> float:
    """Cost of one unit's trajectory, recomputed from ``cost_value`` and quadrature."""
    c = lay.unit.cost
    smooth = CostFunction(a1=c.a1, a2=c.a2, e1=c.e1, e2=c.e2)
    ramp = CostFunction(b1=c.b1, b2=c.b2, b_abs=c.b_abs)
    mesh = dmap.mesh
    total = c.a0 * horizon_length
    if dmap.scheme is Scheme.PIECEWISE_LINEAR:
        t = mesh.knots
        z = cumulative_integral(x, t) if lay.z is not None else np.zeros(t.size)
        total += float(np.dot(mesh.weights, cost_value(smooth, z, x(t), 0.0)))
        slopes = np.diff(x(t)) / mesh.steps
        total += float(np.dot(mesh.steps, cost_value(ramp, 0.0, 0.0, slopes)))
        return total
    gx, gw = gauss_rule(5)
    t = (mesh.knots[:-1, None] + mesh.steps[:, None] * gx[None, :]).ravel()
    qw = (mesh.steps[:, None] * gw[None, :]).ravel()
    dx = derivative(x)
    z = cumulative_integral(x, t) if lay.z is not None else np.zeros(t.size)
    total += float(np.dot(qw, cost_value(smooth, z, x(t), 0.0)))
    total += float(np.dot(qw, cost_value(CostFunction(b1=c.b1, b2=c.b2), 0.0, 0.0, dx(t))))
    if c.b_abs:
        total += float(np.dot(dmap.colloc.weights, c.b_abs * np.abs(dx(dmap.colloc.nodes))))
    return total


def recover_schedule(primal, dmap: DualMap, s: Scenario, qp: QpProblem | None = None, rtol: float = 1e-9) -> Schedule:
    u = np.asarray(primal, dtype=float)
    n_expected = max(int(np.max(lay.x)) for lay in dmap.units) + 1
    if u.ndim != 1 or u.size < n_expected or (qp is not None and u.size != qp.n):
        raise TranscriptionError(f"primal has {u.size} entries; layout needs {qp.n if qp else n_expected}")
    xs, zs = {}, {}
    slack = None
    total = 0.0
    for k, lay in enumerate(dmap.units):
        x, z = _unit_trajectories(u, dmap, lay)
        total += integrated_cost(dmap, lay, x, s.horizon.length)
        if k == dmap.n_units:
            slack = x
            continue
        xs[lay.unit.id] = x
        if z is not None:
            zs[lay.unit.id] = z
    if qp is not None:
        qp_obj = qp.objective(u)
        if abs(total - qp_obj) > rtol * max(1.0, abs(qp_obj)):
            raise ConsistencyError(f"recomputed objective {total!r} != QP objective {qp_obj!r}")
        total = qp_obj
    return Schedule(xs, zs, total, slack, u)
