"""Mehrotra predictor-corrector interior-point method for convex QPs.

Solves ``min 1/2 u'Hu + c'u  s.t.  Au = b,  Gu <= h`` and returns primal and
dual variables under the Lagrangian ``L = 1/2 u'Hu + c'u + nu'(Au-b) + omega'(Gu-h)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .transcribe import QpProblem


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(eq=False)
class QpSolution:
    u: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    slack: np.ndarray
    gap: float
    rel_gap: float
    iterations: int
    status: Status
    primal_objective: float
    dual_objective: float
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    primal_equality: float
    primal_inequality: float
    complementarity: float
    dual_negativity: float

    def max(self) -> float:
        return max(
            self.stationarity,
            self.primal_equality,
            self.primal_inequality,
            self.complementarity,
            self.dual_negativity,
        )

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal_equality": self.primal_equality,
            "primal_inequality": self.primal_inequality,
            "complementarity": self.complementarity,
            "dual_negativity": self.dual_negativity,
        }


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def residuals(p: QpProblem, s: QpSolution) -> KktResiduals:
    """Exact residual norms of the KKT blocks at ``s``."""
    u, nu, om = s.u, s.nu, s.omega
    if u.size != p.n or nu.size != p.b.size or om.size != p.h.size:
        raise ValueError("solution dimensions do not match the problem")
    stat = p.H @ u + p.c + p.A.T @ nu + p.G.T @ om
    slack = p.h - p.G @ u
    return KktResiduals(
        stationarity=_inf(stat),
        primal_equality=_inf(p.A @ u - p.b),
        primal_inequality=float(np.max(np.maximum(-slack, 0.0))) if slack.size else 0.0,
        complementarity=_inf(om * slack),
        dual_negativity=float(np.max(np.maximum(-om, 0.0))) if om.size else 0.0,
    )


class _DenseLDL:
    """Bunch-Kaufman LDL' of a dense symmetric (indefinite) matrix."""

    def __init__(self, M):
        M = M.toarray() if sp.issparse(M) else np.asarray(M)
        lu, d, perm = sla.ldl(M, lower=True, hermitian=True)
        self.L = lu[perm]
        self.perm = perm
        n = d.shape[0]
        self.bands = np.zeros((3, n))
        self.bands[0, 1:] = np.diag(d, 1)
        self.bands[1] = np.diag(d)
        self.bands[2, :-1] = np.diag(d, -1)

    def solve(self, rhs):
        y = sla.solve_triangular(self.L, rhs[self.perm], lower=True, unit_diagonal=True, check_finite=False)
        v = sla.solve_banded((1, 1), self.bands, y, check_finite=False)
        w = sla.solve_triangular(self.L, v, lower=True, trans="T", unit_diagonal=True, check_finite=False)
        out = np.empty_like(w)
        out[self.perm] = w
        return out


class _SparseLU:
    def __init__(self, M):
        self.lu = spla.splu(sp.csc_matrix(M), permc_spec="MMD_AT_PLUS_A")

    def solve(self, rhs):
        return self.lu.solve(rhs)


class _KktSystem:
    """Augmented Newton system ``[H, A', G'; A, 0, 0; G, 0, -S/W]`` with regularization and refinement.

    Keeping the inequality block unreduced avoids forming ``G'(W/S)G``, whose
    entries blow up as complementarity pairs converge.
    """

    def __init__(self, p: QpProblem, reg: float, backend: str):
        self.p = p
        self.reg = reg
        self.n = p.n
        self.me = p.b.size
        self.mi = p.h.size
        size = self.n + self.me + self.mi
        if backend == "auto":
            backend = "dense" if size <= 600 else "sparse"
        self.backend = backend
        self.H = p.H.tocsc()
        self.A = p.A.tocsc()
        self.G = p.G.tocsc()

    def factor(self, inv_d):
        """``inv_d`` is the diagonal ``s / omega`` of the inequality block."""
        blocks = [
            [self.H, self.A.T, self.G.T],
            [self.A, None, None],
            [self.G, None, sp.diags(-inv_d)],
        ]
        n, me, mi = self.n, self.me, self.mi
        # bmat drops empty blocks; pad explicitly
        self.K0 = sp.bmat(blocks, format="csc") if (me and mi) else _bmat_sparse(blocks, n, me, mi)
        reg = sp.diags(np.concatenate([np.full(n, self.reg), np.full(me + mi, -self.reg)]))
        M = (self.K0 + reg).tocsc()
        self.fac = _DenseLDL(M) if self.backend == "dense" else _SparseLU(M)

    def solve(self, r1, r2, r3, refine: int = 2):
        rhs = np.concatenate([r1, r2, r3])
        sol = self.fac.solve(rhs)
        for _ in range(refine):
            sol = sol + self.fac.solve(rhs - self.K0 @ sol)
        n, me = self.n, self.me
        return sol[:n], sol[n : n + me], sol[n + me :]


def _bmat_sparse(blocks, n, me, mi):
    rows = []
    sizes = [n, me, mi]
    for i, row in enumerate(blocks):
        if sizes[i] == 0:
            continue
        cells = []
        for j, blk in enumerate(row):
            if sizes[j] == 0:
                continue
            cells.append(blk if blk is not None else sp.csc_matrix((sizes[i], sizes[j])))
        rows.append(cells)
    return sp.bmat(rows, format="csc")


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def solve_qp(
    p: QpProblem,
    tol: float = 1e-8,
    max_iter: int = 100,
    reg: float = 1e-10,
    backend: str = "auto",
    comp_tol: float | None = None,
) -> QpSolution:
    """Solve ``p``; ``comp_tol`` additionally caps every product ``omega_i * s_i`` at OPTIMAL."""
    if not tol > 0:
        raise ValueError("tol must be > 0")
    n, me, mi = p.n, p.b.size, p.h.size
    H, c, A, b, G, h = p.H, p.c, p.A, p.b, p.G, p.h
    kkt = _KktSystem(p, reg, backend)
    scale_b = 1.0 + _inf(b)
    scale_h = 1.0 + _inf(h)
    scale_c = 1.0 + _inf(c)

    # least-squares start: minimizes 1/2 u'Hu + c'u + 1/2 |Gu - h|^2 subject to Au = b
    kkt.factor(np.ones(mi))
    u, nu, _ = kkt.solve(-c, b, h)
    gu = G @ u
    s = np.maximum(h - gu, 1.0)
    om = np.maximum(gu - h, 1.0)

    history: list[dict] = []
    status = Status.MAX_ITER
    it = 0
    best_rp = np.inf
    stall = 0
    for it in range(max_iter + 1):
        Hu = H @ u
        r_d = Hu + c + A.T @ nu + G.T @ om
        r_p = A @ u - b
        r_i = G @ u + s - h
        qobj = 0.5 * u @ Hu + c @ u
        dobj = -0.5 * u @ Hu - b @ nu - h @ om
        mu = float(s @ om) / mi if mi else 0.0
        denom = max(1.0, abs(qobj))
        rel_gap = abs(qobj - dobj) / denom
        rp_rel = max(_inf(r_p) / scale_b, _inf(r_i) / scale_h)
        rd_rel = _inf(r_d) / scale_c
        history.append(
            {
                "iteration": it,
                "primal_objective": qobj,
                "dual_objective": dobj,
                "primal_residual": rp_rel,
                "dual_residual": rd_rel,
                "mu": mu,
            }
        )
        if rp_rel <= tol and rd_rel <= tol and rel_gap <= tol and (mi == 0 or float(s @ om) / denom <= tol) and (
            comp_tol is None or mi == 0 or float(np.max(s * om)) <= comp_tol
        ):
            status = Status.OPTIMAL
            break
        if it == max_iter:
            break
        if _inf(u) > 1e12 and rd_rel > 1e-6:
            status = Status.UNBOUNDED
            break
        if rp_rel < 0.9 * best_rp:
            best_rp, stall = rp_rel, 0
        else:
            stall += 1
        if it >= 20 and rp_rel > 1e-6 and stall >= 10 and max(_inf(nu), _inf(om)) > 1e8:
            status = Status.INFEASIBLE
            break

        kkt.factor(s / om)

        def direction(r_c):
            du, dnu, dom = kkt.solve(-r_d, -r_p, -r_i + r_c / om)
            ds = -r_i - G @ du
            return du, dnu, ds, dom

        # predictor
        du, dnu, ds, dom = direction(s * om)
        if mi:
            a_aff = min(_max_step(s, ds), _max_step(om, dom))
            mu_aff = float((s + a_aff * ds) @ (om + a_aff * dom)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # corrector
            du, dnu, ds, dom = direction(s * om + ds * dom - sigma * mu)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(om, dom)))
        else:
            alpha = 1.0
        u = u + alpha * du
        nu = nu + alpha * dnu
        s = s + alpha * ds
        om = om + alpha * dom

    pobj = p.objective(u)
    dobj_full = dobj + p.offset
    return QpSolution(
        u=u,
        nu=nu,
        omega=om,
        slack=s,
        gap=float(pobj - dobj_full),
        rel_gap=float(rel_gap),
        iterations=it,
        status=status,
        primal_objective=pobj,
        dual_objective=dobj_full,
        history=history,
    )


def dense_problem(H, c, A=None, b=None, G=None, h=None, offset: float = 0.0) -> QpProblem:
    """Convenience constructor from dense arrays."""
    c = np.asarray(c, dtype=float)
    n = c.size
    H = np.zeros((n, n)) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    return QpProblem(sp.csc_matrix(H), c, sp.csr_matrix(A), b, sp.csr_matrix(G), h, offset)
