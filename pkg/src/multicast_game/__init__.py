"""Multi-rate multicast game form: taxes, equilibria, a centralized oracle and checks."""

from .checker import CheckerConfig, PropertyReport, run_all
from .equilibrium import (
    DynamicsConfig,
    EquilibriumResult,
    best_response,
    construct_candidate_from_optimum,
    find_equilibrium,
    payoff,
    verify_equilibrium,
)
from .mechanism import (
    Message,
    Outcome,
    compute_link_view,
    link_tax,
    outcome,
    strict_budget_transfer,
    tax_gradient,
)
from .model import (
    LinkSpec,
    NetworkScenario,
    UserSpec,
    UtilityFunction,
    make_scenario,
    validate_scenario,
)
from .oracle import CentralizedSolution, brute_force_optimum, solve_centralized

__all__ = [
    "CentralizedSolution",
    "CheckerConfig",
    "DynamicsConfig",
    "EquilibriumResult",
    "LinkSpec",
    "Message",
    "NetworkScenario",
    "Outcome",
    "PropertyReport",
    "UserSpec",
    "UtilityFunction",
    "best_response",
    "brute_force_optimum",
    "compute_link_view",
    "construct_candidate_from_optimum",
    "find_equilibrium",
    "link_tax",
    "make_scenario",
    "outcome",
    "payoff",
    "run_all",
    "solve_centralized",
    "strict_budget_transfer",
    "tax_gradient",
    "validate_scenario",
    "verify_equilibrium",
]
