"""Decentralized transmission-frequency allocation with gateway-side anomaly detection."""

from .solver import (
    AdmmResult,
    AdmmState,
    InfeasibleBudgetError,
    ResourceBudget,
    SolverConfig,
    XUpdateError,
    admm_solve,
    admm_step,
    dual_u_update,
    local_x_update,
    project_onto_feasible,
    residuals,
)
from .utility import Kind, UtilityDomainError, UtilityFunction

__all__ = [
    "AdmmResult",
    "AdmmState",
    "InfeasibleBudgetError",
    "Kind",
    "ResourceBudget",
    "SolverConfig",
    "UtilityDomainError",
    "UtilityFunction",
    "XUpdateError",
    "admm_solve",
    "admm_step",
    "dual_u_update",
    "local_x_update",
    "project_onto_feasible",
    "residuals",
]
