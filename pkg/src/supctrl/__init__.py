"""Optimal control of ODEs driven by the maximum of the state over a trailing window.

The window maximum is smoothed with a rectangle-rule LogIntExp of sharpness
``k``; gradients come from the exact discrete adjoint of the explicit Euler
scheme and the box-constrained problem is solved by projected gradients.
"""

from ._kernels import BACKEND
from .adjoint import (
    AdjointOutput,
    JumpRecord,
    detect_jumps,
    gradient_check,
    optimality_residual,
    projected_residual,
    reduced_gradient,
    solve_discrete_adjoint,
)
from .dynamics import (
    ForwardSolveOutput,
    NoConvergence,
    NonFinite,
    evaluate_objective,
    integral_residual,
    integrate_hardmax,
    integrate_regularized,
    max_gronwall_bound,
    picard_solve,
)
from .optimizer import OptimizerConfig, SolveReport, project_box, projected_gradient
from .problems import (
    ProblemDefinition,
    ProblemId,
    TimeGrid,
    Trajectory,
    build_problem,
    make_grid,
)
from .smoothmax import lie_window, lse

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AdjointOutput",
    "JumpRecord",
    "detect_jumps",
    "gradient_check",
    "optimality_residual",
    "projected_residual",
    "reduced_gradient",
    "solve_discrete_adjoint",
    "ForwardSolveOutput",
    "NoConvergence",
    "NonFinite",
    "evaluate_objective",
    "integral_residual",
    "integrate_hardmax",
    "integrate_regularized",
    "max_gronwall_bound",
    "picard_solve",
    "OptimizerConfig",
    "SolveReport",
    "project_box",
    "projected_gradient",
    "ProblemDefinition",
    "ProblemId",
    "TimeGrid",
    "Trajectory",
    "build_problem",
    "make_grid",
    "lie_window",
    "lse",
]
