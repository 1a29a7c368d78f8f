"""Executable equilibrium properties with residual reports.

The checks follow the logical chain from price stationarity to a common
price per link: stationarity of every max-set user's tax in its own price,
the summed identity over a link, feasibility, a vanishing excess penalty,
complementary slackness, price agreement across groups and the unit-price
condition on rates.  Budget balance, individual rationality and efficiency
are checked afterwards.  Checks never raise on bad profiles; they report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .equilibrium import payoff
from .mechanism import (
    LinkView,
    MessageProfile,
    Outcome,
    compute_link_view,
    outcome,
    tax_gradient,
    unit_price,
)
from .model import NetworkScenario
from .oracle import CentralizedSolution


class CheckerError(ValueError):
    """Raised when a check's precondition does not hold (e.g. uncertified input)."""


PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass(frozen=True)
class CheckerConfig:
    stationarity: float = 1e-6
    budget: float = 1e-8
    efficiency: float = 1e-3
    feasibility: float = 0.0
    identity: float = 1e-9


@dataclass
class PropertyCheck:
    name: str
    residual: float
    threshold: float
    status: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status != FAIL


def _check(name: str, residual: float, threshold: float, details=None) -> PropertyCheck:
    status = PASS if residual <= threshold else FAIL
    return PropertyCheck(name, float(residual), float(threshold), status, details or {})


def _skipped(name: str, threshold: float) -> PropertyCheck:
    return PropertyCheck(name, float("nan"), float(threshold), SKIP)


@dataclass
class PropertyReport:
    checks: list[PropertyCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> PropertyCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def lines(self) -> list[str]:
        out = [f"{c.name} {c.residual!r} {c.threshold!r} {c.status}" for c in self.checks]
        out.append(f"overall {PASS if self.passed else FAIL}")
        return out

    def to_text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _views(profile: MessageProfile, scenario: NetworkScenario) -> dict[str, LinkView]:
    return {
        l: compute_link_view(profile, scenario, l)
        for l in sorted(scenario.link)
        if scenario.link_groups.get(l)
    }


def _max_set_users(view: LinkView):
    for g in view.groups:
        for u in view.gmax[g]:
            yield g, u


# -- individual checks ------------------------------------------------------


def check_price_stationarity(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> PropertyCheck:
    """Projected stationarity of each max-set user's link tax in its own price."""
    residuals = {}
    for l, view in _views(profile, scenario).items():
        for _, u in _max_set_users(view):
            d_price = tax_gradient(profile, scenario, u, l, view)[0]
            if profile[u].pi[l] > 0:
                residuals[(l, u)] = abs(d_price)
            else:
                residuals[(l, u)] = max(0.0, -d_price)
    worst = max(residuals.values(), default=0.0)
    return _check("price-stationarity", worst, tolerance, residuals)


def summed_price_gradient(view: LinkView, profile: MessageProfile, scenario: NetworkScenario):
    """(sum of own-price tax derivatives over max-set users, closed form of that sum).

    Using sum P = sum P_minus, the sum equals
    -2 (|Q_l| eta_plus + sum_i P_minus[i] (E_minus[i] + x_group[i]) / gamma).
    """
    total = sum(
        tax_gradient(profile, scenario, u, view.link_id, view)[0]
        for _, u in _max_set_users(view)
    )
    slack_terms = sum(
        view.P_minus[g] * (view.E_minus[g] + view.x_group[g]) / scenario.gamma
        for g in view.groups
    )
    closed = -2.0 * (len(view.groups) * view.eta_plus + slack_terms)
    return total, closed


def check_summed_identity(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-9
) -> PropertyCheck:
    """The summed own-price derivative on each link matches its closed form."""
    residuals = {}
    for l, view in _views(profile, scenario).items():
        total, closed = summed_price_gradient(view, profile, scenario)
        scale = max(1.0, abs(total), abs(closed))
        residuals[l] = abs(total - closed) / scale
    return _check("summed-identity", max(residuals.values(), default=0.0), tolerance, residuals)


def check_summed_stationarity(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> PropertyCheck:
    """|sum of own-price derivatives| per link, against |Q_l| * max|gmax| * tolerance."""
    residuals, worst_ratio = {}, 0.0
    for l, view in _views(profile, scenario).items():
        total, _ = summed_price_gradient(view, profile, scenario)
        bound = len(view.groups) * max(len(view.gmax[g]) for g in view.groups) * tolerance
        residuals[l] = abs(total)
        worst_ratio = max(worst_ratio, abs(total) / bound)
    # reported on the per-user scale: residual <= tolerance iff every link is within bound
    return _check("summed-stationarity", worst_ratio * tolerance, tolerance, residuals)


def check_feasibility(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 0.0
) -> PropertyCheck:
    """Slack c_l - sum of group bandwidths per link; fails below -tolerance."""
    slack = {}
    for l in sorted(scenario.link):
        if scenario.link_groups.get(l):
            slack[l] = -compute_link_view(profile, scenario, l).excess
        else:
            slack[l] = scenario.link[l].capacity
    worst = max([0.0] + [-s for s in slack.values()])
    return _check("feasibility", worst, tolerance, slack)


def check_eta(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 0.0
) -> PropertyCheck:
    etas = {l: v.eta_plus for l, v in _views(profile, scenario).items()}
    return _check("eta-zero", max(etas.values(), default=0.0), tolerance, etas)


def check_slackness(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> PropertyCheck:
    """|P_minus (E_minus + x_group)| / gamma per link and group."""
    terms = {}
    for l, view in _views(profile, scenario).items():
        for g in view.groups:
            terms[(l, g)] = abs(view.P_minus[g] * (view.E_minus[g] + view.x_group[g])) / scenario.gamma
    return _check("slackness", max(terms.values(), default=0.0), tolerance, terms)


def check_eta_and_slackness(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> tuple[PropertyCheck, PropertyCheck]:
    return check_eta(profile, scenario, 0.0), check_slackness(profile, scenario, tolerance)


def check_common_price(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> PropertyCheck:
    """Largest deviation of a group's max-set price sum from the link mean."""
    spread = {}
    for l, view in _views(profile, scenario).items():
        if len(view.groups) < 2:
            continue
        mean = sum(view.P.values()) / len(view.groups)
        spread[l] = max(abs(p - mean) for p in view.P.values())
    return _check("common-price", max(spread.values(), default=0.0), tolerance, spread)


def successor_price(profile: MessageProfile, view: LinkView, group_id: str, user_id: str) -> float:
    """Price a max-set user pays per unit of rate (P_minus for a lone max user)."""
    return unit_price(profile, view, group_id, user_id)


def check_successor_price(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-6
) -> PropertyCheck:
    """|d tax / d x - successor price| for every max-set user."""
    residuals = {}
    for l, view in _views(profile, scenario).items():
        for g, u in _max_set_users(view):
            d_rate = tax_gradient(profile, scenario, u, l, view)[1]
            residuals[(l, u)] = abs(d_rate - successor_price(profile, view, g, u))
    return _check("successor-price", max(residuals.values(), default=0.0), tolerance, residuals)


def check_budget_balance(result: Outcome, tolerance: float = 1e-8) -> PropertyCheck:
    return _check("budget-balance", abs(result.budget_residual), tolerance)


def check_individual_rationality(
    profile: MessageProfile, scenario: NetworkScenario, tolerance: float = 1e-8
) -> PropertyCheck:
    payoffs = {u: payoff(profile, scenario, u) for u in scenario.user_ids}
    worst = max([0.0] + [-p for p in payoffs.values()])
    return _check("individual-rationality", worst, tolerance, payoffs)


def welfare(profile: MessageProfile, scenario: NetworkScenario) -> float:
    return sum(scenario.user[u].utility.value(profile[u].x) for u in scenario.user_ids)


def check_efficiency(
    profile: MessageProfile,
    solution: CentralizedSolution,
    scenario: NetworkScenario,
    tolerance: float = 1e-3,
    certified: bool = True,
) -> PropertyCheck:
    """Relative welfare gap to the centralized optimum; needs certified inputs."""
    if not certified:
        raise CheckerError("efficiency is only evaluated at a certified equilibrium")
    if not solution.converged:
        raise CheckerError("efficiency needs a converged centralized solution")
    achieved = welfare(profile, scenario)
    gap = (solution.welfare - achieved) / max(1.0, abs(solution.welfare))
    return _check(
        "efficiency", max(gap, 0.0), tolerance, {"welfare": achieved, "optimum": solution.welfare}
    )


# -- pipeline ----------------------------------------------------------------


def run_all(
    profile: MessageProfile,
    scenario: NetworkScenario,
    config: CheckerConfig | None = None,
    solution: CentralizedSolution | None = None,
    certified: bool = True,
) -> PropertyReport:
    """All checks in chain order; equilibrium-only checks are skipped when infeasible."""
    config = config or CheckerConfig()
    tau = config.stationarity
    report = PropertyReport()
    add = report.checks.append
    add(check_price_stationarity(profile, scenario, tau))
    add(check_summed_identity(profile, scenario, config.identity))
    add(check_summed_stationarity(profile, scenario, tau))
    feasible = check_feasibility(profile, scenario, config.feasibility)
    add(feasible)
    if not feasible.passed:
        for name, thr in (
            ("eta-zero", 0.0),
            ("slackness", tau),
            ("common-price", tau),
            ("successor-price", tau),
            ("budget-balance", config.budget),
            ("individual-rationality", config.budget),
            ("efficiency", config.efficiency),
        ):
            add(_skipped(name, thr))
        return report
    eta, slack = check_eta_and_slackness(profile, scenario, tau)
    add(eta)
    add(slack)
    add(check_common_price(profile, scenario, tau))
    add(check_successor_price(profile, scenario, tau))
    add(check_budget_balance(outcome(profile, scenario), config.budget))
    add(check_individual_rationality(profile, scenario, config.budget))
    if solution is not None and certified and solution.converged:
        add(check_efficiency(profile, solution, scenario, config.efficiency, certified))
    else:
        add(_skipped("efficiency", config.efficiency))
    return report
