"""One-call solve: transcribe, run the QP, recover schedule and multipliers."""
from __future__ import annotations

from dataclasses import dataclass

from .market import Scenario
from .pricing import MultiplierTrajectories, PriceReport, price_formula, recover_multipliers
from .qp import QpSolution, Status, solve_qp
from .transcribe import DualMap, QpProblem, Schedule, recover_schedule, transcribe
from .trajectory import Scheme


class SolveError(RuntimeError):
    def __init__(self, status: Status, message: str):
        super().__init__(message)
        self.status = status


@dataclass(eq=False)
class DispatchResult:
    scenario: Scenario
    scheme: Scheme
    qp: QpProblem
    dmap: DualMap
    solution: QpSolution
    schedule: Schedule
    multipliers: MultiplierTrajectories

    @property
    def times(self):
        return self.dmap.mesh.knots

    @property
    def lam(self):
        return self.multipliers.lambda_

    def report(self, tol: float | None = None) -> PriceReport:
        return price_formula(self.scenario, self.schedule, self.multipliers, tol)


def dispatch(
    s: Scenario,
    scheme=Scheme.PIECEWISE_LINEAR,
    intervals: int = 100,
    tol: float = 1e-8,
    max_iter: int = 100,
    comp_tol: float | None = 1e-9,
) -> DispatchResult:
    scheme = Scheme.parse(scheme)
    qp, dmap = transcribe(s, scheme, intervals)
    sol = solve_qp(qp, tol=tol, max_iter=max_iter, comp_tol=comp_tol)
    if not sol.optimal:
        raise SolveError(sol.status, f"QP solve ended with status {sol.status.value} after {sol.iterations} iterations")
    sched = recover_schedule(sol.u, dmap, s, qp)
    mult = recover_multipliers(sol, dmap)
    return DispatchResult(s, scheme, qp, dmap, sol, sched, mult)
