"""Continuous-time economic dispatch with marginal-price recovery."""
from .dispatch import DispatchResult, SolveError, dispatch
from .market import (
    CostFunction,
    DuckParams,
    IngestionError,
    NondifferentiableError,
    Scenario,
    Slack,
    Unit,
    cost_gradients,
    cost_value,
    duck_curve,
    function_scenario,
    load_scenario,
    serialize_scenario,
)
from .pricing import aggregate_hourly, euler_lagrange_residual, marginal_units, price_formula
from .qp import QpSolution, Status, solve_qp
from .trajectory import Horizon, Mesh, Scheme, Trajectory, derivative, eval_traj, integrate
from .transcribe import recover_schedule, transcribe
from .verify import (
    PerturbationSpec,
    Shape,
    VerificationReport,
    cross_scheme_check,
    kkt_check,
    perturbation_check,
    refinement_study,
)

__version__ = "0.1.0"
