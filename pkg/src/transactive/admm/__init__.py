"""Distributed day-ahead scheduling via consensus splitting on pairwise trades."""

from .central import CentralizedResult, InfeasibleScenario, solve_centralized
from .coordinator import (
    CoordinatorPort,
    CoordinatorStatus,
    CoordinatorTimeout,
    CoordinatorView,
    InProcessCoordinator,
    quantize_trade_row,
)
from .engine import (
    AdmmConfig,
    AdmmError,
    AdmmResult,
    DualState,
    IterationReport,
    PrimalSolveError,
    VariableMap,
    build_primal,
    extract_schedule,
    primal_linear_term,
    residual,
    run_admm,
    solve_dual,
    update_multipliers,
)

__all__ = [
    "AdmmConfig",
    "AdmmError",
    "AdmmResult",
    "CentralizedResult",
    "CoordinatorPort",
    "CoordinatorStatus",
    "CoordinatorTimeout",
    "CoordinatorView",
    "DualState",
    "InfeasibleScenario",
    "InProcessCoordinator",
    "IterationReport",
    "PrimalSolveError",
    "VariableMap",
    "build_primal",
    "extract_schedule",
    "primal_linear_term",
    "quantize_trade_row",
    "residual",
    "run_admm",
    "solve_dual",
    "solve_centralized",
    "update_multipliers",
]
