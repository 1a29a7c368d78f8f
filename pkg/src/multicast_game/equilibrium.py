"""Nash equilibria of the induced game with quasilinear payoffs u(x) - t."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .mechanism import (
    Message,
    MessageProfile,
    MechanismError,
    check_profile,
    compute_link_view,
    link_tax,
    optimal_own_price,
    tax_gradient,
    zero_profile,
)
from .model import NetworkScenario
from .oracle import CentralizedSolution, member_prices


@dataclass(frozen=True)
class DynamicsConfig:
    max_iterations: int = 2000
    damping: float = 0.5
    message_tolerance: float = 1e-10
    foc_tolerance: float = 1e-6
    grid_points: int = 41
    probe_grid: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    random_probes: int = 32
    grid_probes: int = 9
    price_max: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not (self.message_tolerance > 0 and self.foc_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")


@dataclass
class EquilibriumReport:
    passed: bool
    max_foc_residual: float
    max_deviation_gain: float
    max_fd_mismatch: float
    foc: dict[str, float] = field(default_factory=dict)
    gains: dict[str, float] = field(default_factory=dict)
    best_deviation: dict[str, Message] = field(default_factory=dict)


@dataclass
class IterationRecord:
    iteration: int
    max_message_change: float
    foc_residual: float


@dataclass
class EquilibriumResult:
    profile: dict[str, Message]
    converged: bool
    iterations: int
    max_foc_residual: float
    max_deviation_gain: float
    report: EquilibriumReport | None = None
    trace: list[IterationRecord] = field(default_factory=list)


def payoff(profile: MessageProfile, scenario: NetworkScenario, user_id: str) -> float:
    spec = scenario.user[user_id]
    tax = sum(link_tax(profile, scenario, l, user_id) for l in spec.route)
    return spec.utility.value(profile[user_id].x) - tax


def rate_limit(scenario: NetworkScenario, user_id: str) -> float:
    spec = scenario.user[user_id]
    return min(spec.utility.satiation, scenario.max_route_capacity(user_id))


def price_limit(scenario: NetworkScenario, config: DynamicsConfig) -> float:
    if config.price_max is not None:
        return config.price_max
    return sum(u.utility.marginal(0.0) for u in scenario.users)


def _with(profile: MessageProfile, user_id: str, msg: Message) -> dict[str, Message]:
    trial = dict(profile)
    trial[user_id] = msg
    return trial


def _priced(profile, scenario, user_id, x):
    """Message with rate ``x`` and every own price set to its tax-minimising value."""
    msg = profile[user_id].with_x(x)
    trial = _with(profile, user_id, msg)
    pi = dict(msg.pi)
    for l in scenario.user[user_id].route:
        best = optimal_own_price(trial, scenario, user_id, l)
        if best is not None:
            pi[l] = best
    return Message(x, pi)


def _reduced_payoff(profile, scenario, user_id, x):
    msg = _priced(profile, scenario, user_id, x)
    trial = _with(profile, user_id, msg)
    return payoff(trial, scenario, user_id), msg


def _reduced_slope(profile, scenario, user_id, x):
    """d/dx of the price-optimised payoff (envelope: own prices held at optimum)."""
    msg = _priced(profile, scenario, user_id, x)
    trial = _with(profile, user_id, msg)
    spec = scenario.user[user_id]
    slope = spec.utility.marginal(x)
    for l in spec.route:
        slope -= tax_gradient(trial, scenario, user_id, l)[1]
    return slope


def _breakpoints(profile, scenario, user_id, lo, hi):
    """Rates at which the user's tax switches regime (ties, zero excess)."""
    spec = scenario.user[user_id]
    points = set()
    for l in spec.route:
        for v in scenario.group_members_on_link(spec.group_id, l):
            if v != user_id:
                # the tie itself and the closest rates on either side of it
                y = profile[v].x
                points.update((math.nextafter(y, -math.inf), y, math.nextafter(y, math.inf)))
        view = compute_link_view(profile, scenario, l)
        points.add(_fill_point(view, spec.group_id))
    return sorted(p for p in points if lo <= p <= hi)


def _fill_point(view, group_id: str) -> float:
    """Largest group demand whose computed excess on the link is not positive."""
    def excess(y):
        return sum(y if g == group_id else view.x_group[g] for g in view.groups) - view.capacity

    others = sum(view.x_group[g] for g in view.groups if g != group_id)
    y = max(view.capacity - others, 0.0)
    while y > 0.0 and excess(y) > 0.0:
        y = math.nextafter(y, -math.inf)
    return y


def best_response(
    profile: MessageProfile,
    scenario: NetworkScenario,
    user_id: str,
    config: DynamicsConfig | None = None,
) -> Message:
    """Approximate payoff maximiser over the user's own rate and prices.

    For a fixed rate the tax is a convex quadratic in each own price, so
    prices are set in closed form; the rate is chosen from a grid, the
    regime breakpoints, and the stationary points of every smooth piece.
    The incumbent is kept unless a candidate is strictly better.
    """
    config = config or DynamicsConfig()
    hi = rate_limit(scenario, user_id)
    incumbent = profile[user_id]
    best_val = payoff(profile, scenario, user_id)
    best_msg = incumbent
    scale = 1e-12 * max(1.0, abs(best_val))

    grid = list(np.linspace(0.0, hi, config.grid_points))
    breaks = _breakpoints(profile, scenario, user_id, 0.0, hi)
    candidates = set(grid) | set(breaks) | {min(incumbent.x, hi)}

    # stationary points inside each smooth piece
    roots: set[float] = set()
    corners: set[float] = set()
    edges = sorted({0.0, hi, *breaks})
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-12 * max(1.0, hi):
            continue
        inner = [a + (b - a) * 1e-9] + [g for g in grid if a < g < b] + [b - (b - a) * 1e-9]
        slopes = [_reduced_slope(profile, scenario, user_id, t) for t in inner]
        if slopes[0] <= 0:
            corners.add(a)
        if slopes[-1] >= 0:
            corners.add(b)
        for (t0, s0), (t1, s1) in zip(zip(inner, slopes), zip(inner[1:], slopes[1:])):
            if s0 > 0 >= s1:
                if s1 == 0:
                    roots.add(t1)
                    continue
                roots.add(
                    brentq(
                        lambda t: _reduced_slope(profile, scenario, user_id, t),
                        t0,
                        t1,
                        xtol=1e-15,
                        rtol=4 * np.finfo(float).eps,
                        maxiter=200,
                    )
                )

    for x in sorted(candidates | roots | corners):
        val, msg = _reduced_payoff(profile, scenario, user_id, float(x))
        if val > best_val + scale:
            best_val, best_msg = val, msg
    # a stationary point within roundoff of the best is more precise than a grid point
    for x in sorted(roots) + sorted(corners):
        val, msg = _reduced_payoff(profile, scenario, user_id, float(x))
        if val >= best_val - scale and msg.x != best_msg.x:
            best_val, best_msg = max(val, best_val), msg
            break
    # closed-form prices at the chosen rate, unless they are clearly worse
    val, msg = _reduced_payoff(profile, scenario, user_id, best_msg.x)
    if val >= best_val - scale:
        best_val, best_msg = max(val, best_val), msg
    return _refine(profile, scenario, user_id, best_msg, best_val, hi, config.probe_grid)


def _refine(profile, scenario, user_id, msg, val, hi, steps):
    """Coordinate-wise local search over the rate and each price."""
    scale = 1e-12 * max(1.0, abs(val))
    for d in steps:
        improved = True
        while improved:
            improved = False
            trials = [msg.with_x(x) for x in (msg.x - d, msg.x + d) if 0.0 <= x <= hi]
            for l in msg.pi:
                trials += [msg.with_price(l, p) for p in (msg.pi[l] - d, msg.pi[l] + d) if p >= 0]
            for trial in trials:
                v = payoff(_with(profile, user_id, trial), scenario, user_id)
                if v > val + scale:
                    msg, val, improved = trial, v, True
                    break
    return msg


def _blend(old: Message, new: Message, weight: float) -> Message:
    if weight >= 1.0:
        return new
    x = old.x + weight * (new.x - old.x)
    if abs(x - new.x) <= 4 * math.ulp(new.x):
        x = new.x  # keep exact ties exact
    pi = {l: old.pi[l] + weight * (new.pi[l] - old.pi[l]) for l in old.pi}
    return Message(x, pi)


def _change(a: Message, b: Message) -> float:
    return max([abs(a.x - b.x)] + [abs(a.pi[l] - b.pi[l]) for l in a.pi])


def analytic_foc(profile: MessageProfile, scenario: NetworkScenario, user_id: str):
    """Projected stationarity residuals from analytic gradients.

    Returns (rate residual, price residual, user at a tie kink).
    """
    spec = scenario.user[user_id]
    msg = profile[user_id]
    d_rate = spec.utility.marginal(msg.x)
    price_res = 0.0
    tied = False
    for l in spec.route:
        view = compute_link_view(profile, scenario, l)
        gm = view.gmax[spec.group_id]
        if user_id in gm and len(gm) >= 2:
            tied = True
        dp, dx = tax_gradient(profile, scenario, user_id, l, view)
        d_rate -= dx
        if user_id in gm:
            g = -dp
            price_res = max(price_res, abs(g) if msg.pi[l] > 0 else max(0.0, g))
    if msg.x <= 0.0:
        rate_res = max(0.0, d_rate)
    elif msg.x >= rate_limit(scenario, user_id):
        rate_res = max(0.0, -d_rate)
    else:
        rate_res = abs(d_rate)
    return rate_res, price_res, tied


def _trace_foc(profile, scenario, user_id) -> float:
    """Cheap stationarity measure; rates at or next to a tie kink are not scored."""
    rate_res, price_res, tied = analytic_foc(profile, scenario, user_id)
    h = 1e-6 * max(1.0, profile[user_id].x)
    if tied or _near_tie(profile, scenario, user_id, h):
        rate_res = 0.0
    return max(rate_res, price_res)


def find_equilibrium(
    scenario: NetworkScenario,
    config: DynamicsConfig | None = None,
    initial: MessageProfile | None = None,
) -> EquilibriumResult:
    """Damped Gauss-Seidel best-response dynamics from the all-zero profile."""
    config = config or DynamicsConfig()
    profile = dict(initial) if initial is not None else zero_profile(scenario)
    trace: list[IterationRecord] = []
    settled = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        change = 0.0
        for uid in scenario.user_ids:
            old = profile[uid]
            br = best_response(profile, scenario, uid, config)
            new = _blend(old, br, config.damping)
            profile[uid] = new
            change = max(change, _change(old, new))
        foc = max([_trace_foc(profile, scenario, u) for u in scenario.user_ids] or [0.0])
        trace.append(IterationRecord(it, change, foc))
        if change < config.message_tolerance:
            settled = True
            break
    if config.max_iterations == 0:
        it = 0
    # leftover excess of a few ulps is invisible to the quadratic penalty; remove it
    projected = _project_feasible(scenario, {u: m.x for u, m in profile.items()})
    profile = {u: m.with_x(projected[u]) for u, m in profile.items()}
    report = verify_equilibrium(profile, scenario, config.foc_tolerance, config)
    return EquilibriumResult(
        profile=profile,
        converged=settled and report.passed,
        iterations=it,
        max_foc_residual=report.max_foc_residual,
        max_deviation_gain=report.max_deviation_gain,
        report=report,
        trace=trace,
    )


def construct_candidate_from_optimum(
    scenario: NetworkScenario, solution: CentralizedSolution, tolerance: float = 1e-6
) -> dict[str, Message]:
    """Message profile that reproduces the optimum with a common price per link.

    Rates are the optimal rates, pulled onto the feasible set when the
    solver left a few ulps of excess on a link.  On each link the max-set prices of every
    group sum to the shadow price; member ``m`` posts the price share of its
    predecessor, so every max-set user pays its own marginal utility share at
    its successor's price.  Non-max users post ``lambda / |gmax|``.
    """
    if not solution.converged or solution.kkt_residual > tolerance:
        raise MechanismError(
            f"optimum not certified (kkt residual {solution.kkt_residual!r})"
        )
    rates = _project_feasible(scenario, solution.rates)
    shares = solution.member_prices or member_prices(scenario, rates, solution.shadow_prices)[0]
    pi: dict[str, dict[str, float]] = {u: {} for u in scenario.user_ids}
    for l in sorted(scenario.link):
        lam = solution.shadow_prices[l]
        for g in scenario.link_groups.get(l, ()):
            members = scenario.group_members_on_link(g, l)
            top = max(rates[u] for u in members)
            gm = tuple(u for u in members if rates[u] == top)
            if len(gm) == 1:
                pi[gm[0]][l] = lam
            else:
                raw = [shares.get((u, l), 0.0) for u in gm]
                total = sum(raw)
                if total > 0:
                    raw = [lam * r / total for r in raw]
                else:
                    raw = [lam / len(gm)] * len(gm)
                for k, u in enumerate(gm):
                    pi[gm[(k + 1) % len(gm)]][l] = raw[k]
            for u in members:
                if u not in gm:
                    pi[u][l] = lam / len(gm)
    profile = {u: Message(rates[u], pi[u]) for u in scenario.user_ids}
    check_profile(profile, scenario)
    return profile


def _project_feasible(scenario: NetworkScenario, rates: dict[str, float]) -> dict[str, float]:
    """Scale rates down on overloaded links until every link load is <= capacity."""
    rates = dict(rates)

    def load(l):
        return sum(
            max(rates[u] for u in scenario.group_members_on_link(g, l))
            for g in scenario.link_groups.get(l, ())
        )

    for l in sorted(scenario.link):
        cap = scenario.link[l].capacity
        used = load(l)
        if used <= cap:
            continue
        factor = cap / used
        users = scenario.link_users[l]
        while load(l) > cap:
            for u in users:
                rates[u] = rates[u] * factor if factor < 1 else math.nextafter(rates[u], 0.0)
            factor = 1.0
    return rates


def _fd(f, x, h, lower=0.0):
    if x - h < lower:
        return (f(x + h) - f(x)) / h
    return (f(x + h) - f(x - h)) / (2 * h)


def _near_tie(profile, scenario, user_id, h) -> bool:
    """True when a group-mate's rate lies within ``h`` (a rate kink is that close)."""
    spec = scenario.user[user_id]
    x = profile[user_id].x
    for l in spec.route:
        for v in scenario.group_members_on_link(spec.group_id, l):
            if v != user_id and abs(profile[v].x - x) <= h:
                return True
    return False


def verify_equilibrium(
    profile: MessageProfile,
    scenario: NetworkScenario,
    tolerance: float = 1e-6,
    config: DynamicsConfig | None = None,
) -> EquilibriumReport:
    """Certify a profile as an approximate Nash equilibrium.

    (a) stationarity in the user's own rate and prices from analytic
        gradients, cross-checked by finite differences; a user tied at its
        group's maximum is checked with one-sided differences instead, since
        its tax changes form on either side of the tie;
    (b) unilateral deviation probes on grids, around the incumbent and at
        random, reporting the largest payoff gain.
    """
    config = config or DynamicsConfig()
    check_profile(profile, scenario)
    rng = np.random.default_rng(config.seed)
    p_hi = max(
        [price_limit(scenario, config)]
        + [2 * p for m in profile.values() for p in m.pi.values()]
    )
    report = EquilibriumReport(True, 0.0, 0.0, 0.0)
    for uid in scenario.user_ids:
        spec = scenario.user[uid]
        msg = profile[uid]
        base = payoff(profile, scenario, uid)
        x_hi = rate_limit(scenario, uid)

        def pay_rate(x):
            return payoff(_with(profile, uid, msg.with_x(x)), scenario, uid)

        rate_res, price_res, tied = analytic_foc(profile, scenario, uid)
        mismatch = 0.0
        h = 1e-6 * max(1.0, msg.x)
        tied = tied or _near_tie(profile, scenario, uid, h)
        if tied:
            up = (pay_rate(msg.x + h) - base) / h if msg.x + h <= x_hi else -math.inf
            down = (base - pay_rate(msg.x - h)) / h if msg.x - h >= 0 else math.inf
            rate_res = max(0.0, up) + max(0.0, -down)
        else:
            d_rate = spec.utility.marginal(msg.x) - sum(
                tax_gradient(profile, scenario, uid, l)[1] for l in spec.route
            )
            upper = x_hi if spec.utility.satiation < math.inf else math.inf
            if msg.x + h <= upper:
                mismatch = abs(_fd(pay_rate, msg.x, h) - d_rate)
        for l in spec.route:
            view = compute_link_view(profile, scenario, l)
            if uid not in view.gmax[spec.group_id]:
                continue

            def pay_price(p, l=l):
                return payoff(_with(profile, uid, msg.with_price(l, p)), scenario, uid)

            hp = 1e-6 * max(1.0, msg.pi[l])
            analytic = -tax_gradient(profile, scenario, uid, l, view)[0]
            mismatch = max(mismatch, abs(_fd(pay_price, msg.pi[l], hp) - analytic))
        foc = max(rate_res, price_res)

        # deviation probes
        probes: list[Message] = []
        for x in np.linspace(0.0, x_hi, config.grid_probes):
            probes.append(msg.with_x(float(x)))
            probes.append(_priced(profile, scenario, uid, float(x)))
        for l in spec.route:
            for p in np.linspace(0.0, p_hi, config.grid_probes):
                probes.append(msg.with_price(l, float(p)))
        for d in config.probe_grid:
            for x in (msg.x - d, msg.x + d):
                if 0.0 <= x <= x_hi:
                    probes.append(msg.with_x(x))
                    probes.append(_priced(profile, scenario, uid, x))
            for l in spec.route:
                for p in (msg.pi[l] - d, msg.pi[l] + d):
                    if p >= 0:
                        probes.append(msg.with_price(l, p))
        for _ in range(config.random_probes):
            x = float(rng.uniform(0.0, x_hi))
            pi = {l: float(rng.uniform(0.0, p_hi)) for l in spec.route}
            probes.append(Message(x, pi))
            probes.append(_priced(profile, scenario, uid, x))
        gain, arg = -math.inf, msg
        for dev in probes:
            g = payoff(_with(profile, uid, dev), scenario, uid) - base
            if g > gain:
                gain, arg = g, dev

        report.foc[uid] = foc
        report.gains[uid] = gain
        report.best_deviation[uid] = arg
        report.max_foc_residual = max(report.max_foc_residual, foc)
        report.max_deviation_gain = max(report.max_deviation_gain, gain)
        report.max_fd_mismatch = max(report.max_fd_mismatch, mismatch)
    fd_tol = max(1e-5, 10 * tolerance)
    report.passed = (
        report.max_foc_residual <= tolerance
        and report.max_deviation_gain <= tolerance
        and report.max_fd_mismatch <= fd_tol
    )
    return report
