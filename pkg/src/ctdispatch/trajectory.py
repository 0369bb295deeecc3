"""Piecewise-polynomial signals on a time mesh.

Every trajectory is stored as per-segment coefficients in the local power
basis ``p_j(t) = sum_m c[j, m] (t - t_j)**m``, which makes evaluation,
differentiation and integration exact for every scheme.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


class DomainError(ValueError):
    """Query outside the horizon or with reversed bounds."""


class SchemaError(ValueError):
    """Malformed trajectory input (lengths, ordering)."""


class Scheme(str, enum.Enum):
    PIECEWISE_LINEAR = "uniform"
    CUBIC_HERMITE = "spline"
    # produced by ``derivative``; never used for transcription
    PIECEWISE_CONSTANT = "piecewise_constant"
    PIECEWISE_QUADRATIC = "piecewise_quadratic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        aliases = {
            "uniform": cls.PIECEWISE_LINEAR,
            "linear": cls.PIECEWISE_LINEAR,
            "piecewise_linear": cls.PIECEWISE_LINEAR,
            "pl": cls.PIECEWISE_LINEAR,
            "spline": cls.CUBIC_HERMITE,
            "cubic": cls.CUBIC_HERMITE,
            "cubic_hermite": cls.CUBIC_HERMITE,
            "hermite": cls.CUBIC_HERMITE,
        }
        if key not in aliases:
            raise ValueError(f"unknown scheme {value!r}")
        return aliases[key]


_ORDER = {
    Scheme.PIECEWISE_CONSTANT: 1,
    Scheme.PIECEWISE_LINEAR: 2,
    Scheme.PIECEWISE_QUADRATIC: 3,
    Scheme.CUBIC_HERMITE: 4,
}
_DERIVED = {
    Scheme.PIECEWISE_LINEAR: Scheme.PIECEWISE_CONSTANT,
    Scheme.CUBIC_HERMITE: Scheme.PIECEWISE_QUADRATIC,
    Scheme.PIECEWISE_QUADRATIC: Scheme.PIECEWISE_LINEAR,
    Scheme.PIECEWISE_CONSTANT: Scheme.PIECEWISE_CONSTANT,
}


@dataclass(frozen=True)
class Horizon:
    t1: float
    t2: float

    def __post_init__(self):
        if not (np.isfinite(self.t1) and np.isfinite(self.t2)) or self.t2 <= self.t1:
            raise DomainError(f"horizon needs t2 > t1, got [{self.t1}, {self.t2}]")

    @property
    def length(self) -> float:
        return self.t2 - self.t1


@lru_cache(maxsize=None)
def lobatto_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto points and weights on [0, 1]; exact to degree 2n-3."""
    if npts < 2:
        raise ValueError("Gauss-Lobatto needs at least 2 points")
    if npts == 2:
        x = np.array([-1.0, 1.0])
    else:
        # interior points are the roots of P'_{n-1}
        pc = np.zeros(npts)
        pc[-1] = 1.0
        inner = np.polynomial.legendre.legroots(np.polynomial.legendre.legder(pc))
        x = np.concatenate([[-1.0], np.sort(inner.real), [1.0]])
    pn = np.polynomial.legendre.legval(x, np.eye(npts)[npts - 1])
    w = 2.0 / (npts * (npts - 1) * pn**2)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def gauss_rule(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Time points with quadrature weights.

    ``kind`` is ``"trapezoid"`` for a plain knot mesh or ``"lobatto<n>"`` for a
    collocation mesh that places n Gauss-Lobatto points in every knot interval.
    ``knots`` are the interval breakpoints (equal to ``nodes`` for trapezoid).
    """

    horizon: Horizon
    nodes: np.ndarray
    weights: np.ndarray
    knots: np.ndarray
    kind: str = "trapezoid"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        knots = np.asarray(self.knots, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise SchemaError("mesh needs at least two nodes")
        if nodes.shape != weights.shape:
            raise SchemaError("one weight per node required")
        if np.any(np.diff(nodes) <= 0) or np.any(np.diff(knots) <= 0):
            raise SchemaError("mesh nodes must be strictly increasing")
        tol = 1e-12 * max(1.0, abs(self.horizon.t1), abs(self.horizon.t2))
        if abs(nodes[0] - self.horizon.t1) > tol or abs(nodes[-1] - self.horizon.t2) > tol:
            raise SchemaError("mesh must start at t1 and end at t2")
        if np.any(weights < 0):
            raise SchemaError("quadrature weights must be nonnegative")
        for arr in (nodes, weights, knots):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def from_nodes(cls, horizon: Horizon, nodes) -> "Mesh":
        nodes = np.asarray(nodes, dtype=float)
        dt = np.diff(nodes)
        w = np.zeros_like(nodes)
        w[:-1] += dt / 2
        w[1:] += dt / 2
        return cls(horizon, nodes, w, nodes, "trapezoid")

    @classmethod
    def uniform(cls, horizon: Horizon, intervals: int) -> "Mesh":
        if intervals < 1:
            raise SchemaError("need at least one interval")
        nodes = np.linspace(horizon.t1, horizon.t2, intervals + 1)
        return cls.from_nodes(horizon, nodes)

    @classmethod
    def lobatto(cls, horizon: Horizon, knots, npts: int = 3) -> "Mesh":
        """Composite Gauss-Lobatto mesh; shared interval endpoints are merged."""
        knots = np.asarray(knots, dtype=float)
        x, w = lobatto_rule(npts)
        h = np.diff(knots)
        pts = (knots[:-1, None] + h[:, None] * x[None, :-1]).ravel()
        nodes = np.concatenate([pts, knots[-1:]])
        weights = np.zeros(nodes.size)
        per = npts - 1
        for j in range(h.size):
            weights[j * per : j * per + npts] += h[j] * w
        return cls(horizon, nodes, weights, knots, f"lobatto{npts}")

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def intervals(self) -> int:
        return self.knots.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.knots[:-1] + self.knots[1:])

    def integrate_samples(self, values) -> float:
        return float(np.dot(self.weights, values))


# Hermite basis on s in [0, 1]: value/derivative at s=0, value/derivative at s=1
_HERMITE_POWER = np.array(
    [
        [1.0, 0.0, -3.0, 2.0],  # h00
        [0.0, 1.0, -2.0, 1.0],  # h10
        [0.0, 0.0, 3.0, -2.0],  # h01
        [0.0, 0.0, -1.0, 1.0],  # h11
    ]
)


def hermite_basis(s, derivative: int = 0) -> np.ndarray:
    """Rows h00, h10, h01, h11 (or their s-derivatives / antiderivatives) at s.

    ``derivative=-1`` returns the antiderivative vanishing at s=0.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    coeffs = _HERMITE_POWER
    if derivative > 0:
        for _ in range(derivative):
            coeffs = coeffs[:, 1:] * np.arange(1, coeffs.shape[1])
    elif derivative == -1:
        coeffs = np.hstack([np.zeros((4, 1)), coeffs / np.arange(1, 5)])
    powers = s[None, :] ** np.arange(coeffs.shape[1])[:, None]
    return coeffs @ powers


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Immutable piecewise polynomial over ``mesh.knots``."""

    scheme: Scheme
    mesh: Mesh
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.mesh.intervals, _ORDER[self.scheme]):
            raise SchemaError(
                f"{self.scheme.name} on {self.mesh.intervals} intervals needs coeffs of "
                f"shape {(self.mesh.intervals, _ORDER[self.scheme])}, got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors

    @classmethod
    def linear(cls, mesh: Mesh, values) -> "Trajectory":
        v = _check_len(values, mesh.knots.size)
        h = mesh.steps
        c = np.column_stack([v[:-1], np.diff(v) / h])
        return cls(Scheme.PIECEWISE_LINEAR, mesh, c)

    @classmethod
    def hermite(cls, mesh: Mesh, values, slopes) -> "Trajectory":
        v = _check_len(values, mesh.knots.size)
        d = _check_len(slopes, mesh.knots.size)
        h = mesh.steps
        c = np.empty((h.size, 4))
        for j in range(h.size):
            # power basis in s, rescaled to t - t_j
            local = (
                v[j] * _HERMITE_POWER[0]
                + h[j] * d[j] * _HERMITE_POWER[1]
                + v[j + 1] * _HERMITE_POWER[2]
                + h[j] * d[j + 1] * _HERMITE_POWER[3]
            )
            c[j] = local / h[j] ** np.arange(4)
        return cls(Scheme.CUBIC_HERMITE, mesh, c)

    @classmethod
    def constant(cls, mesh: Mesh, value: float, scheme=Scheme.PIECEWISE_LINEAR) -> "Trajectory":
        v = np.full(mesh.knots.size, float(value))
        return from_samples(mesh, v, scheme)

    # queries

    @property
    def horizon(self) -> Horizon:
        return self.mesh.horizon

    @property
    def knot_values(self) -> np.ndarray:
        return self(self.mesh.knots)

    @property
    def knot_slopes(self) -> np.ndarray:
        return derivative(self)(self.mesh.knots)

    def __call__(self, t):
        return eval_traj(self, t)


def _check_len(values, n: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size != n:
        raise SchemaError(f"expected {n} samples, got {v.size if v.ndim == 1 else v.shape}")
    return v


def _locate(mesh: Mesh, t: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(mesh.knots, t, side="right") - 1
    return np.clip(idx, 0, mesh.intervals - 1)


def eval_traj(traj: Trajectory, t):
    """Value of ``traj`` at ``t`` (scalar or array)."""
    scalar = np.ndim(t) == 0
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    hz = traj.horizon
    slop = 1e-12 * max(1.0, abs(hz.t1), abs(hz.t2))
    if np.any(tt < hz.t1 - slop) or np.any(tt > hz.t2 + slop):
        raise DomainError(f"t outside horizon [{hz.t1}, {hz.t2}]")
    j = _locate(traj.mesh, tt)
    dt = tt - traj.mesh.knots[j]
    c = traj.coeffs[j]
    out = c[:, -1].copy()
    for m in range(c.shape[1] - 2, -1, -1):
        out = out * dt + c[:, m]
    return float(out[0]) if scalar else out


def derivative(traj: Trajectory) -> Trajectory:
    """Exact derivative; degree drops by one."""
    c = traj.coeffs
    if c.shape[1] == 1:
        dc = np.zeros_like(c)
    else:
        dc = c[:, 1:] * np.arange(1, c.shape[1])
    return Trajectory(_DERIVED[traj.scheme], traj.mesh, dc)


def _segment_antiderivative(c: np.ndarray, dt) -> np.ndarray:
    m = np.arange(1, c.shape[1] + 1)
    powers = np.asarray(dt)[..., None] ** m
    return np.sum(c / m * powers, axis=-1)


def integrate(traj: Trajectory, a: float, b: float) -> float:
    """Exact integral of ``traj`` over [a, b]."""
    hz = traj.horizon
    slop = 1e-12 * max(1.0, abs(hz.t1), abs(hz.t2))
    if b < a:
        raise DomainError(f"reversed integration bounds [{a}, {b}]")
    if a < hz.t1 - slop or b > hz.t2 + slop:
        raise DomainError(f"integration bounds outside horizon [{hz.t1}, {hz.t2}]")
    return float(cumulative_integral(traj, np.array([a, b]))[1] - cumulative_integral(traj, np.array([a]))[0])


def cumulative_integral(traj: Trajectory, t) -> np.ndarray:
    """``int_{t1}^{t} traj`` for every entry of ``t``."""
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    knots = traj.mesh.knots
    full = _segment_antiderivative(traj.coeffs, np.diff(knots))
    before = np.concatenate([[0.0], np.cumsum(full)])
    j = _locate(traj.mesh, tt)
    partial = _segment_antiderivative(traj.coeffs[j], tt - knots[j])
    return before[j] + partial


def from_samples(mesh: Mesh, values, scheme=Scheme.PIECEWISE_LINEAR) -> Trajectory:
    """Interpolate samples given at ``mesh.knots``.

    Cubic Hermite slopes come from centered differences (one-sided at the ends).
    """
    scheme = Scheme.parse(scheme)
    v = _check_len(values, mesh.knots.size)
    if scheme is Scheme.PIECEWISE_LINEAR:
        return Trajectory.linear(mesh, v)
    if scheme is not Scheme.CUBIC_HERMITE:
        raise SchemaError(f"cannot interpolate samples into {scheme.name}")
    return Trajectory.hermite(mesh, v, difference_slopes(mesh.knots, v))


def difference_slopes(t, v) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.empty_like(v)
    d[1:-1] = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    d[0] = (v[1] - v[0]) / (t[1] - t[0])
    d[-1] = (v[-1] - v[-2]) / (t[-1] - t[-2])
    return d


def resample(traj: Trajectory, mesh: Mesh, scheme=None) -> Trajectory:
    """Re-express ``traj`` on another knot mesh (exact value/slope transfer for Hermite)."""
    scheme = Scheme.parse(scheme) if scheme is not None else traj.scheme
    v = traj(mesh.knots)
    if scheme is Scheme.PIECEWISE_LINEAR:
        return Trajectory.linear(mesh, v)
    if traj.scheme is Scheme.CUBIC_HERMITE:
        # slope of the source at each knot, taking the right-hand piece except at t2
        return Trajectory.hermite(mesh, v, derivative(traj)(mesh.knots))
    return from_samples(mesh, v, scheme)


def centered_derivative(times, values, at) -> np.ndarray:
    """Finite-difference derivative of sampled data, evaluated at ``at``.

    A target strictly between two samples uses that pair (centered for a
    staggered grid); a target on a sample uses its two neighbours; the ends fall
    back to one-sided differences.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    at = np.atleast_1d(np.asarray(at, dtype=float))
    if times.size < 2:
        return np.zeros(at.size)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(times))))
    out = np.empty(at.size)
    for n, t in enumerate(at):
        k = int(np.searchsorted(times, t))
        if k < times.size and abs(times[k] - t) <= tol:
            lo, hi = max(k - 1, 0), min(k + 1, times.size - 1)
        elif k > 0 and abs(times[k - 1] - t) <= tol:
            lo, hi = max(k - 2, 0), min(k, times.size - 1)
        else:
            lo, hi = k - 1, k
            if lo < 0:
                lo, hi = 0, 1
            elif hi >= times.size:
                lo, hi = times.size - 2, times.size - 1
        if hi == lo:
            lo, hi = (lo - 1, lo) if lo > 0 else (lo, lo + 1)
        out[n] = (values[hi] - values[lo]) / (times[hi] - times[lo])
    return out
