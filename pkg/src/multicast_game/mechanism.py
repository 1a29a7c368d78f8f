"""The game form: messages, per-link quantities, taxes and the outcome function.

Every user sends one rate request ``x`` (valid on all links of its route) and
one nonnegative price per route link.  On each link the group bandwidth is the
largest request among the group's members there; the members attaining it form
the group's max set.  Taxes are computed link by link.

Adopted per-link quantities for a group ``i`` on link ``l`` with ``n = |Q_l|``:

    P[i]       = sum of max-set prices
    P_minus[i] = sum of the other groups' P, divided by n - 1
    E_minus[i] = other groups' bandwidth minus capacity
    Gamma[i]   = -(1 / (n - 1)) * sum over other groups of P[j] * x_group[j]
    eta_plus   = max(0, (total bandwidth - capacity) / gamma_hat)

A link used by a single group (allowed only when it cannot bind) takes
``P_minus = 0``, ``Gamma = 0`` and ``E_minus = -capacity``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

from .model import NetworkScenario, single_group_binding

# tax component labels
SUCCESSOR = "successor"      # price-linear payment at the successor's price
GAMMA = "gamma"              # share of the group's Gamma term
NONMAX = "nonmax"            # payment of a user below its group's maximum
TRANSFER = "transfer"        # budget-balancing reallocation of non-max payments
QUADRATIC = "quadratic"      # (P - P_minus - eta)^2 / |gmax|
CROSS = "cross"              # -2 P_minus (P - P_minus)(E + x) / (gamma |gmax|)
PRICE_GAP = "price_gap"      # (P_minus - P) x for a lone max user
COMPONENTS = (SUCCESSOR, GAMMA, NONMAX, TRANSFER, QUADRATIC, CROSS, PRICE_GAP)
# components that vanish whenever P = P_minus and eta_plus = 0
EQUILIBRIUM_VANISHING = (QUADRATIC, CROSS, PRICE_GAP)


class MechanismError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    x: float
    pi: Mapping[str, float]

    def __post_init__(self) -> None:
        if not self.x >= 0:
            raise MechanismError(f"negative rate request {self.x!r}")
        for l, p in self.pi.items():
            if not p >= 0:
                raise MechanismError(f"negative price {p!r} on link {l!r}")

    def with_x(self, x: float) -> "Message":
        return replace(self, x=x)

    def with_price(self, link_id: str, price: float) -> "Message":
        pi = dict(self.pi)
        pi[link_id] = price
        return replace(self, pi=pi)


MessageProfile = Mapping[str, Message]


def zero_profile(scenario: NetworkScenario) -> dict[str, Message]:
    return {
        u.user_id: Message(0.0, {l: 0.0 for l in u.route}) for u in scenario.users
    }


def check_profile(profile: MessageProfile, scenario: NetworkScenario) -> None:
    """Raise MechanismError unless there is exactly one well-formed message per user."""
    missing = set(scenario.user) - set(profile)
    extra = set(profile) - set(scenario.user)
    if missing or extra:
        raise MechanismError(
            f"profile users mismatch: missing={sorted(missing)} extra={sorted(extra)}"
        )
    for uid, msg in profile.items():
        route = set(scenario.user[uid].route)
        if set(msg.pi) != route:
            raise MechanismError(
                f"prices of {uid!r} must cover exactly its route {sorted(route)}, "
                f"got {sorted(msg.pi)}"
            )


@dataclass
class LinkView:
    link_id: str
    capacity: float
    groups: tuple[str, ...]
    x_group: dict[str, float]
    gmax: dict[str, tuple[str, ...]]
    P: dict[str, float]
    P_minus: dict[str, float]
    E_minus: dict[str, float]
    eta_plus: float
    Gamma: dict[str, float]
    excess: float = 0.0                  # total bandwidth - capacity
    members: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def total_demand(self) -> float:
        return sum(self.x_group[g] for g in self.groups)


def group_link_demand(
    profile: MessageProfile, scenario: NetworkScenario, group_id: str, link_id: str
) -> float:
    members = scenario.group_members_on_link(group_id, link_id)
    if not members:
        raise MechanismError(f"group {group_id!r} not on link {link_id!r}")
    return max(profile[u].x for u in members)


def compute_link_view(
    profile: MessageProfile, scenario: NetworkScenario, link_id: str
) -> LinkView:
    capacity = scenario.link[link_id].capacity
    groups = scenario.link_groups.get(link_id, ())
    if len(groups) == 1 and single_group_binding(scenario, link_id):
        raise MechanismError(
            f"link {link_id!r} is used by a single group and may bind; "
            "the tax is undefined there"
        )
    members: dict[str, tuple[str, ...]] = {}
    x_group: dict[str, float] = {}
    gmax: dict[str, tuple[str, ...]] = {}
    P: dict[str, float] = {}
    for g in groups:
        mem = scenario.group_members_on_link(g, link_id)
        members[g] = mem
        top = max(profile[u].x for u in mem)
        x_group[g] = top
        gmax[g] = tuple(u for u in mem if profile[u].x == top)
        P[g] = sum(profile[u].pi[link_id] for u in gmax[g])

    excess = sum(x_group[g] for g in groups) - capacity
    eta_plus = max(0.0, excess / scenario.gamma_hat)

    n = len(groups)
    P_minus: dict[str, float] = {}
    E_minus: dict[str, float] = {}
    Gamma: dict[str, float] = {}
    for g in groups:
        others = [h for h in groups if h != g]
        E_minus[g] = sum(x_group[h] for h in others) - capacity
        if n >= 2:
            P_minus[g] = sum(P[h] for h in others) / (n - 1)
            Gamma[g] = -sum(P[h] * x_group[h] for h in others) / (n - 1)
        else:
            P_minus[g] = 0.0
            Gamma[g] = 0.0
    return LinkView(
        link_id=link_id,
        capacity=capacity,
        groups=groups,
        x_group=x_group,
        gmax=gmax,
        P=P,
        P_minus=P_minus,
        E_minus=E_minus,
        eta_plus=eta_plus,
        Gamma=Gamma,
        excess=excess,
        members=members,
    )


def link_views(profile: MessageProfile, scenario: NetworkScenario) -> dict[str, LinkView]:
    return {l: compute_link_view(profile, scenario, l) for l in sorted(scenario.link)}


def successor(view: LinkView, group_id: str, user_id: str) -> str:
    """Next max-set member after ``user_id`` in circular ascending-id order."""
    gm = view.gmax[group_id]
    k = gm.index(user_id)
    return gm[(k + 1) % len(gm)]


def unit_price(
    profile: MessageProfile, view: LinkView, group_id: str, user_id: str
) -> float:
    """Per-unit price a max-set user pays on the link.

    With two or more max-set members this is the successor's posted price;
    a lone max user pays the average price of the competing groups.
    """
    gm = view.gmax[group_id]
    if len(gm) >= 2:
        return profile[successor(view, group_id, user_id)].pi[view.link_id]
    return view.P_minus[group_id]


def link_tax_components(
    profile: MessageProfile,
    scenario: NetworkScenario,
    link_id: str,
    user_id: str,
    view: LinkView | None = None,
) -> dict[str, float]:
    """Tax owed by one user on one link, split into labelled components."""
    if view is None:
        view = compute_link_view(profile, scenario, link_id)
    g = scenario.user[user_id].group_id
    if g not in view.gmax or user_id not in view.members[g]:
        raise MechanismError(f"user {user_id!r} does not cross link {link_id!r}")
    comp = dict.fromkeys(COMPONENTS, 0.0)
    gm = view.gmax[g]
    x = profile[user_id].x
    if user_id in gm:
        size = len(gm)
        Pg, Pm, eta = view.P[g], view.P_minus[g], view.eta_plus
        if size >= 2:
            comp[SUCCESSOR] = profile[successor(view, g, user_id)].pi[link_id] * x
        else:
            # lone max user: unit price P_minus, split as own price plus gap
            comp[SUCCESSOR] = Pg * x
            comp[PRICE_GAP] = (Pm - Pg) * x
        comp[QUADRATIC] = (Pg - Pm - eta) ** 2 / size
        comp[CROSS] = (
            -2.0 * Pm / size * (Pg - Pm) * (view.E_minus[g] + x) / scenario.gamma
        )
        comp[GAMMA] = view.Gamma[g] / size
    else:
        first = gm[0]
        comp[NONMAX] = profile[first].pi[link_id] * (view.E_minus[g] + view.x_group[g])
    return comp


def link_tax(
    profile: MessageProfile,
    scenario: NetworkScenario,
    link_id: str,
    user_id: str,
    view: LinkView | None = None,
) -> float:
    return sum(link_tax_components(profile, scenario, link_id, user_id, view).values())


@dataclass
class Outcome:
    allocation: dict[str, float]
    tax_by_link: dict[tuple[str, str], float]
    tax_total: dict[str, float]
    budget_residual: float
    components: dict[tuple[str, str], dict[str, float]] = field(default_factory=dict)

    def component_sum(self, names) -> float:
        return sum(c[name] for c in self.components.values() for name in names)


def _assemble(
    allocation: dict[str, float],
    components: dict[tuple[str, str], dict[str, float]],
    users,
) -> Outcome:
    tax_by_link = {key: sum(c.values()) for key, c in components.items()}
    tax_total = {u: 0.0 for u in users}
    for (u, _l), t in tax_by_link.items():
        tax_total[u] += t
    return Outcome(
        allocation=allocation,
        tax_by_link=tax_by_link,
        tax_total=tax_total,
        budget_residual=sum(tax_total.values()),
        components=components,
    )


def outcome(
    profile: MessageProfile,
    scenario: NetworkScenario,
    views: dict[str, LinkView] | None = None,
) -> Outcome:
    check_profile(profile, scenario)
    if views is None:
        views = link_views(profile, scenario)
    components: dict[tuple[str, str], dict[str, float]] = {}
    for uid in scenario.user_ids:
        for l in scenario.user[uid].route:
            components[(uid, l)] = link_tax_components(profile, scenario, l, uid, views[l])
    allocation = {u: profile[u].x for u in scenario.user_ids}
    return _assemble(allocation, components, scenario.user_ids)


def strict_budget_transfer(
    result: Outcome,
    profile: MessageProfile,
    scenario: NetworkScenario,
    tolerance: float = 0.0,
) -> Outcome:
    """Redistribute every non-max payment so that it is offset within the link.

    A non-max payment ``pi_f (E_minus + x_group)`` (``f`` the first max-set
    member of the payer's group) is undone in two pieces: ``-pi_f E_minus`` is
    charged to the smallest-id max-set member of the same group other than
    ``f`` (``f`` itself when the max set is a singleton) and ``-pi_f x_group``
    to the first max-set member of another group, cycling through the other
    groups in id order.
    """
    views = link_views(profile, scenario)
    for l, view in views.items():
        if view.excess > tolerance:
            raise MechanismError(
                f"profile infeasible on link {l!r} (excess {view.excess!r}); "
                "transfer defined only for feasible allocations"
            )
    components = {key: dict(c) for key, c in result.components.items()}
    for l, view in views.items():
        turn = 0
        for uid in scenario.link_users[l]:
            g = scenario.user[uid].group_id
            gm = view.gmax[g]
            if uid in gm:
                continue
            first = gm[0]
            price = profile[first].pi[l]
            same = [s for s in gm if s != first] or [first]
            others = [h for h in view.groups if h != g]
            if others:
                cross_to = view.gmax[others[turn % len(others)]][0]
                turn += 1
            else:
                cross_to = same[0]
            components[(same[0], l)][TRANSFER] -= price * view.E_minus[g]
            components[(cross_to, l)][TRANSFER] -= price * view.x_group[g]
    return _assemble(dict(result.allocation), components, scenario.user_ids)


def tax_gradient(
    profile: MessageProfile,
    scenario: NetworkScenario,
    user_id: str,
    link_id: str,
    view: LinkView | None = None,
) -> tuple[float, float]:
    """Partial derivatives of the link tax in the user's own price and rate.

    A max-set user's rate is treated as the group bandwidth; Gamma, P_minus and
    E_minus do not depend on the user's own message.  At zero excess the
    derivative of eta_plus is taken from the right (1 / gamma_hat).
    """
    if view is None:
        view = compute_link_view(profile, scenario, link_id)
    g = scenario.user[user_id].group_id
    gm = view.gmax[g]
    if user_id not in gm:
        return 0.0, 0.0
    size = len(gm)
    Pg, Pm, eta = view.P[g], view.P_minus[g], view.eta_plus
    gap = Pg - Pm - eta
    slack = view.E_minus[g] + profile[user_id].x
    d_price = 2.0 * gap / size - 2.0 * Pm / size * slack / scenario.gamma
    d_eta = 1.0 / scenario.gamma_hat if view.excess >= 0 else 0.0
    unit = unit_price(profile, view, g, user_id)
    d_rate = unit - 2.0 * gap * d_eta / size - 2.0 * Pm / size * (Pg - Pm) / scenario.gamma
    return d_price, d_rate


def optimal_own_price(
    profile: MessageProfile,
    scenario: NetworkScenario,
    user_id: str,
    link_id: str,
    view: LinkView | None = None,
) -> float | None:
    """Own price minimising the link tax given everything else (None if irrelevant).

    For a max-set user the tax is a convex quadratic in its own price with
    minimiser ``P = P_minus + eta + P_minus (E_minus + x) / gamma``.
    """
    if view is None:
        view = compute_link_view(profile, scenario, link_id)
    g = scenario.user[user_id].group_id
    gm = view.gmax[g]
    if user_id not in gm:
        return None
    Pm = view.P_minus[g]
    target = Pm + view.eta_plus + Pm * (view.E_minus[g] + profile[user_id].x) / scenario.gamma
    rest = sum(profile[u].pi[link_id] for u in gm if u != user_id)
    return max(0.0, target - rest)
