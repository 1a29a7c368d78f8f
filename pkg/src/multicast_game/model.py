"""Scenario types, utility families and structural validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

LOG = "log"
QUADRATIC = "quadratic"
UTILITY_KINDS = (LOG, QUADRATIC)


class DomainError(ValueError):
    """Raised when a rate lies outside a utility's domain."""


@dataclass(frozen=True)
class UtilityFunction:
    """Concave, increasing utility of a received rate.

    ``log``:       u(x) = a * ln(1 + b x),      x >= 0
    ``quadratic``: u(x) = a x - (b / 2) x**2,   0 <= x <= a / b
    """

    kind: str
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("utility parameters a and b must be positive")

    @property
    def satiation(self) -> float:
        """Smallest rate beyond which the utility stops increasing."""
        if self.kind == QUADRATIC:
            return self.a / self.b
        return math.inf

    def _check(self, x: float) -> None:
        if not x >= 0.0:
            raise DomainError(f"rate {x!r} is negative")
        if self.kind == QUADRATIC and x > self.satiation * (1 + 1e-12):
            raise DomainError(f"rate {x!r} exceeds satiation {self.satiation!r}")

    def value(self, x: float) -> float:
        self._check(x)
        if self.kind == LOG:
            return self.a * math.log1p(self.b * x)
        return self.a * x - 0.5 * self.b * x * x

    def marginal(self, x: float) -> float:
        self._check(x)
        if self.kind == LOG:
            return self.a * self.b / (1.0 + self.b * x)
        return max(self.a - self.b * x, 0.0)

    def curvature(self, x: float) -> float:
        """Second derivative u''(x)."""
        self._check(x)
        if self.kind == LOG:
            return -self.a * self.b * self.b / (1.0 + self.b * x) ** 2
        return -self.b

    def inverse_marginal(self, price: float) -> float:
        """Rate at which u'(x) = price (satiation for price <= 0)."""
        if price <= 0.0:
            return self.satiation
        if self.kind == LOG:
            return max(self.a / price - 1.0 / self.b, 0.0)
        return max((self.a - price) / self.b, 0.0)


def utility_value(u: UtilityFunction, x: float) -> float:
    return u.value(x)


def utility_marginal(u: UtilityFunction, x: float) -> float:
    return u.marginal(x)


@dataclass(frozen=True)
class LinkSpec:
    link_id: str
    capacity: float


@dataclass(frozen=True)
class UserSpec:
    user_id: str
    group_id: str
    route: tuple[str, ...]
    utility: UtilityFunction


@dataclass(frozen=True)
class NetworkScenario:
    """Links, multicast users and the two positive mechanism constants."""

    links: tuple[LinkSpec, ...]
    users: tuple[UserSpec, ...]
    gamma: float = 1.0
    gamma_hat: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "users", tuple(self.users))

    @cached_property
    def link(self) -> dict[str, LinkSpec]:
        return {spec.link_id: spec for spec in self.links}

    @cached_property
    def user(self) -> dict[str, UserSpec]:
        return {spec.user_id: spec for spec in self.users}

    @cached_property
    def user_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.user))

    @cached_property
    def groups(self) -> dict[str, tuple[str, ...]]:
        """Group id -> sorted member ids."""
        out: dict[str, list[str]] = {}
        for spec in self.users:
            out.setdefault(spec.group_id, []).append(spec.user_id)
        return {g: tuple(sorted(m)) for g, m in sorted(out.items())}

    @cached_property
    def link_users(self) -> dict[str, tuple[str, ...]]:
        """Link id -> sorted ids of users whose route crosses it."""
        out: dict[str, list[str]] = {spec.link_id: [] for spec in self.links}
        for spec in self.users:
            for l in spec.route:
                out.setdefault(l, []).append(spec.user_id)
        return {l: tuple(sorted(set(u))) for l, u in out.items()}

    @cached_property
    def link_groups(self) -> dict[str, tuple[str, ...]]:
        """Link id -> sorted ids of groups using it (Q_l)."""
        return {
            l: tuple(sorted({self.user[u].group_id for u in users}))
            for l, users in self.link_users.items()
        }

    def group_members_on_link(self, group_id: str, link_id: str) -> tuple[str, ...]:
        return tuple(
            u for u in self.link_users.get(link_id, ()) if self.user[u].group_id == group_id
        )

    def route_cap(self, user_id: str) -> float:
        """Largest rate that fits every link on the user's route."""
        return min(self.link[l].capacity for l in self.user[user_id].route)

    def max_route_capacity(self, user_id: str) -> float:
        return max(self.link[l].capacity for l in self.user[user_id].route)


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    competition: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors


def single_group_binding(scenario: NetworkScenario, link_id: str) -> bool:
    """True when a link used by one group could be saturated by it.

    Conservative: sums the satiation rates of every member on the link.
    """
    users = scenario.link_users.get(link_id, ())
    cap_sum = sum(scenario.user[u].utility.satiation for u in users)
    return cap_sum > scenario.link[link_id].capacity


def validate_scenario(scenario: NetworkScenario) -> ValidationReport:
    report = ValidationReport()
    err = report.errors.append

    if not scenario.gamma > 0:
        err(f"nonpositive constant gamma={scenario.gamma!r}")
    if not scenario.gamma_hat > 0:
        err(f"nonpositive constant gamma_hat={scenario.gamma_hat!r}")

    seen_links: set[str] = set()
    for spec in scenario.links:
        if spec.link_id in seen_links:
            err(f"duplicate link id {spec.link_id!r}")
        seen_links.add(spec.link_id)
        if not spec.capacity > 0:
            err(f"nonpositive capacity on link {spec.link_id!r}: {spec.capacity!r}")

    seen_users: set[str] = set()
    for spec in scenario.users:
        if spec.user_id in seen_users:
            err(f"duplicate user id {spec.user_id!r}")
        seen_users.add(spec.user_id)
        if not spec.route:
            err(f"empty route for user {spec.user_id!r}")
        if len(set(spec.route)) != len(spec.route):
            err(f"repeated link in route of user {spec.user_id!r}")
        for l in spec.route:
            if l not in seen_links and l not in scenario.link:
                err(f"user {spec.user_id!r} routes over unknown link {l!r}")

    if report.errors:
        return report

    for l in sorted(scenario.link):
        n_groups = len(scenario.link_groups.get(l, ()))
        report.competition[l] = n_groups
        if n_groups == 0:
            report.warnings.append(f"link {l!r} carries no users")
        elif n_groups == 1:
            if single_group_binding(scenario, l):
                err(f"link {l!r} is used by a single group and may bind (|Q_l| = 1)")
            else:
                report.warnings.append(
                    f"link {l!r} is used by a single group but cannot bind"
                )
    return report


def make_scenario(
    links: Iterable[tuple[str, float]],
    users: Iterable[tuple[str, str, Iterable[str], UtilityFunction]],
    gamma: float = 1.0,
    gamma_hat: float = 1.0,
) -> NetworkScenario:
    """Terse constructor used by fixtures and tests."""
    return NetworkScenario(
        links=tuple(LinkSpec(l, float(c)) for l, c in links),
        users=tuple(UserSpec(u, g, tuple(r), ut) for u, g, r, ut in users),
        gamma=gamma,
        gamma_hat=gamma_hat,
    )
