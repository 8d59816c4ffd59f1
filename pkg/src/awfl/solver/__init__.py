"""Joint selection-probability and bandwidth optimisation."""

from .algorithms import (
    DualMultipliers,
    JointSolution,
    NewtonStep,
    OnlineSolution,
    bcd_update_p,
    initial_point,
    lambert_w0,
    newton_step,
    online_probability,
    optimal_w_closed_form,
    solve_joint,
    solve_online,
    solve_p_bcd,
    solve_p_exact,
    solve_w_dual,
)
from .problem import (
    AuxiliaryParams,
    ConvergenceError,
    Diagnostics,
    InfeasiblePlanError,
    LineSearchError,
    OnlineInstance,
    ProblemInstance,
    Residuals,
    SolverError,
    SolverSettings,
    check_feasible,
    objective_online,
    objective_p1,
    residuals,
    targets,
)

__all__ = [name for name in dir() if not name.startswith("_")]
