"""Centralized welfare optimum with max-aggregated group bandwidth.

Problem (auxiliary variables ``y`` per group and link)::

    maximize    sum_j u_j(x_j)
    subject to  x_j <= y[i, l]          for j in group i, l on j's route
                sum_i y[i, l] <= c_l    for every link l
                x, y >= 0

``solve_centralized`` prices the capacity constraints and ascends the dual.
For fixed link prices each group's subproblem

    max  sum_j u_j(x_j) - sum_l lambda_l * max_{j on l} x_j

is a separable concave objective minus the Lovasz extension of the weighted
coverage function ``F(A) = sum of lambda_l over links touched by A``.  Its
solution has nested level sets: member ``j`` receives at least ``t`` exactly
when it belongs to the largest minimiser of ``F(A) - sum_{j in A} u_j'(t)``.
Groups are small, so the minimiser is found by enumerating subsets and each
rate by bisection on ``t``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .model import NetworkScenario


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    tolerance: float = 1e-10
    max_iterations: int = 50_000
    bisection_steps: int = 80


@dataclass
class KKTReport:
    primal_infeasibility: float
    dual_infeasibility: float
    complementary_slackness: float
    stationarity: dict[str, float]
    link_stationarity: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(
            [self.primal_infeasibility, self.dual_infeasibility, self.complementary_slackness]
            + list(self.stationarity.values())
            + list(self.link_stationarity.values())
        )


@dataclass
class CentralizedSolution:
    rates: dict[str, float]
    group_bandwidth: dict[tuple[str, str], float]
    shadow_prices: dict[str, float]
    welfare: float
    kkt_residual: float
    converged: bool = True
    iterations: int = 0
    # member share of each link price (j, l) -> mu; sums to lambda_l over max members
    member_prices: dict[tuple[str, str], float] = field(default_factory=dict)


def rate_cap(scenario: NetworkScenario, user_id: str) -> float:
    spec = scenario.user[user_id]
    return min(spec.utility.satiation, scenario.route_cap(user_id))


def _marginal_or_cap(scenario: NetworkScenario, uid: str, t: float, cap: float) -> float:
    if t > cap:
        return -math.inf
    return scenario.user[uid].utility.marginal(t)


class _GroupSolver:
    """Exact maximiser of one group's priced subproblem."""

    def __init__(self, scenario: NetworkScenario, group_id: str, steps: int):
        self.scenario = scenario
        self.members = scenario.groups[group_id]
        self.links = sorted({l for u in self.members for l in scenario.user[u].route})
        self.caps = np.array([rate_cap(scenario, u) for u in self.members])
        m = len(self.members)
        if m > 16:
            raise OracleError(f"group {group_id!r} too large for subset enumeration")
        self.subsets = np.array(list(itertools.product((0, 1), repeat=m)), dtype=float)
        # link coverage indicator per subset
        touch = np.array(
            [[l in scenario.user[u].route for l in self.links] for u in self.members],
            dtype=float,
        )
        self.cover = (self.subsets @ touch) > 0
        self.steps = steps

    def _in_top_set(self, t: float, lam: np.ndarray) -> np.ndarray:
        w = np.array(
            [
                _marginal_or_cap(self.scenario, u, t, self.caps[k])
                for k, u in enumerate(self.members)
            ]
        )
        F = self.cover @ lam
        w_fin = np.where(np.isfinite(w), w, -1e300)
        vals = F - self.subsets @ w_fin
        best = vals.min()
        slack = 1e-13 * max(1.0, abs(best), float(np.abs(F).max(initial=0.0)))
        ties = self.subsets[vals <= best + slack]
        return ties.max(axis=0) > 0

    def solve(self, price: dict[str, float]) -> np.ndarray:
        lam = np.array([price[l] for l in self.links])
        hi_all = float(self.caps.max())
        x = np.zeros(len(self.members))
        # membership is monotone in t; bisect every member on the same interval
        # so members sharing a level get bit-identical rates
        top = self._in_top_set(hi_all, lam)
        for k in range(len(self.members)):
            if top[k]:
                x[k] = hi_all
                continue
            if not self._in_top_set(0.0, lam)[k]:
                continue
            lo, hi = 0.0, hi_all
            for _ in range(self.steps):
                mid = 0.5 * (lo + hi)
                if mid == lo or mid == hi:
                    break
                if self._in_top_set(mid, lam)[k]:
                    lo = mid
                else:
                    hi = mid
            x[k] = lo
        return np.minimum(x, self.caps)


def _bandwidth(scenario: NetworkScenario, rates: dict[str, float]) -> dict[tuple[str, str], float]:
    out = {}
    for l in sorted(scenario.link):
        for g in scenario.link_groups.get(l, ()):
            out[(g, l)] = max(rates[u] for u in scenario.group_members_on_link(g, l))
    return out


def _welfare(scenario: NetworkScenario, rates: dict[str, float]) -> float:
    return sum(scenario.user[u].utility.value(rates[u]) for u in scenario.user_ids)


def _respond(solvers, scenario, lam: dict[str, float]) -> dict[str, float]:
    rates: dict[str, float] = {}
    for solver in solvers:
        x = solver.solve(lam)
        rates.update(zip(solver.members, x.tolist()))
    return rates


def _dual_value(scenario, rates, lam) -> float:
    y = _bandwidth(scenario, rates)
    val = _welfare(scenario, rates)
    for l, c in ((l, scenario.link[l].capacity) for l in scenario.link):
        use = sum(y[(g, l)] for g in scenario.link_groups.get(l, ()))
        val += lam[l] * (c - use)
    return val


def member_prices(
    scenario: NetworkScenario,
    rates: dict[str, float],
    shadow_prices: dict[str, float],
) -> tuple[dict[tuple[str, str], float], dict[str, float], dict[tuple[str, str], float]]:
    """Split each link price among the members attaining their group's bandwidth.

    Nonnegative least squares on ``u_j'(x_j) = sum_l mu[j, l]`` (members with
    positive rate) and ``sum_{j tight} mu[j, l] = lambda_l`` (groups with
    positive bandwidth).  Returns the split and the residual of every row.
    """
    y = _bandwidth(scenario, rates)
    tight = [
        (u, l)
        for l in sorted(scenario.link)
        for u in scenario.link_users.get(l, ())
        if rates[u] == y[(scenario.user[u].group_id, l)]
    ]
    index = {key: k for k, key in enumerate(tight)}
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    labels: list[tuple[str, object]] = []
    for u in scenario.user_ids:
        if rates[u] <= 0:
            continue
        row = np.zeros(len(tight))
        for l in scenario.user[u].route:
            if (u, l) in index:
                row[index[(u, l)]] = 1.0
        rows.append(row)
        rhs.append(scenario.user[u].utility.marginal(rates[u]))
        labels.append(("user", u))
    for (g, l), yl in sorted(y.items()):
        if yl <= 0:
            continue
        row = np.zeros(len(tight))
        for u in scenario.group_members_on_link(g, l):
            if (u, l) in index:
                row[index[(u, l)]] = 1.0
        rows.append(row)
        rhs.append(shadow_prices[l])
        labels.append(("link", (g, l)))
    if not tight or not rows:
        mu = np.zeros(len(tight))
        resid = np.array([-r for r in rhs])
    else:
        A = np.vstack(rows)
        b = np.array(rhs)
        mu, _ = nnls(A, b, maxiter=50 * A.shape[1] + 100)
        resid = A @ mu - b
    split = {key: float(mu[k]) for key, k in index.items()}
    user_res: dict[str, float] = {u: 0.0 for u in scenario.user_ids}
    link_res: dict[tuple[str, str], float] = {}
    for (kind, key), r in zip(labels, resid):
        if kind == "user":
            user_res[key] = abs(float(r))
        else:
            link_res[key] = abs(float(r))
    # zero-rate users: marginal utility must not exceed what raising x would cost
    for u in scenario.user_ids:
        if rates[u] <= 0:
            cost = sum(shadow_prices[l] for l in scenario.user[u].route)
            user_res[u] = max(0.0, scenario.user[u].utility.marginal(0.0) - cost)
    return split, user_res, link_res


def kkt_residuals(scenario: NetworkScenario, solution: CentralizedSolution) -> KKTReport:
    rates = solution.rates
    lam = solution.shadow_prices
    y = _bandwidth(scenario, rates)
    primal = 0.0
    comp = 0.0
    for l in sorted(scenario.link):
        use = sum(y[(g, l)] for g in scenario.link_groups.get(l, ()))
        gap = use - scenario.link[l].capacity
        primal = max(primal, gap)
        comp = max(comp, abs(lam.get(l, 0.0) * gap))
    for u in scenario.user_ids:
        primal = max(primal, -rates[u])
    dual = max([0.0] + [-v for v in lam.values()])
    _, user_res, link_res = member_prices(scenario, rates, lam)
    return KKTReport(
        primal_infeasibility=primal,
        dual_infeasibility=dual,
        complementary_slackness=comp,
        stationarity=user_res,
        link_stationarity=link_res,
    )


def solve_centralized(
    scenario: NetworkScenario, config: OracleConfig | None = None
) -> CentralizedSolution:
    """Projected gradient descent on the dual, with exact group responses."""
    config = config or OracleConfig()
    links = sorted(scenario.link)
    solvers = [_GroupSolver(scenario, g, config.bisection_steps) for g in scenario.groups]
    cap = np.array([scenario.link[l].capacity for l in links])

    def respond(lam_vec):
        lam = dict(zip(links, lam_vec.tolist()))
        rates = _respond(solvers, scenario, lam)
        y = _bandwidth(scenario, rates)
        use = np.array(
            [sum(y[(g, l)] for g in scenario.link_groups.get(l, ())) for l in links]
        )
        return rates, cap - use, _dual_value(scenario, rates, lam)

    lam = np.zeros(len(links))
    rates, grad, value = respond(lam)
    step = 1.0
    iterations = 0
    converged = False

    def residual(lam_vec, grad_vec):
        infeas = np.maximum(-grad_vec, 0.0)
        cs = np.abs(lam_vec * grad_vec)
        proj = np.abs(np.maximum(lam_vec - grad_vec, 0.0) - lam_vec)
        return float(max(infeas.max(initial=0.0), cs.max(initial=0.0), proj.max(initial=0.0)))

    while iterations < config.max_iterations:
        if residual(lam, grad) <= config.tolerance:
            converged = True
            break
        iterations += 1
        # backtracking on the (convex) dual function
        while True:
            trial = np.maximum(lam - step * grad, 0.0)
            t_rates, t_grad, t_value = respond(trial)
            d = trial - lam
            if t_value <= value + grad @ d + (d @ d) / (2 * step) + 1e-15 * abs(value):
                break
            step *= 0.5
            if step < 1e-14:
                break
        # Barzilai-Borwein guess for the next step
        s, r = trial - lam, t_grad - grad
        lam, rates, grad, value = trial, t_rates, t_grad, t_value
        sr = float(s @ r)
        step = float(s @ s) / sr if sr > 1e-300 else step * 2.0
        step = min(max(step, 1e-8), 1e8)

    shadow = dict(zip(links, lam.tolist()))
    solution = CentralizedSolution(
        rates=rates,
        group_bandwidth=_bandwidth(scenario, rates),
        shadow_prices=shadow,
        welfare=_welfare(scenario, rates),
        kkt_residual=0.0,
        converged=converged,
        iterations=iterations,
    )
    solution.member_prices, _, _ = member_prices(scenario, rates, shadow)
    solution.kkt_residual = kkt_residuals(scenario, solution).max_residual
    return solution


BRUTE_FORCE_MAX_USERS = 5
BRUTE_FORCE_MAX_LINKS = 3


def _grid_welfare(scenario, grid_step, capacity_override=None, chunk=200_000):
    """Best welfare over a grid of group bandwidths.

    Utilities are nondecreasing, so on every link one designated group takes
    all capacity left by the others; each member then receives the smallest
    bandwidth along its route (capped at satiation).
    """
    caps = {l: scenario.link[l].capacity for l in scenario.link}
    if capacity_override:
        caps.update(capacity_override)
    free: list[tuple[str, str]] = []
    fill: dict[str, tuple[str, str]] = {}
    for l in sorted(scenario.link):
        groups = scenario.link_groups.get(l, ())
        if not groups:
            continue
        fill[l] = (groups[-1], l)
        free.extend((g, l) for g in groups[:-1])
    axes = [np.arange(0.0, caps[l] + 0.5 * grid_step, grid_step) for (_g, l) in free]
    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes)) if sizes else 1
    best_w, best_y = -math.inf, None
    users = scenario.user_ids
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        cols = {}
        rem = idx.copy()
        for k in reversed(range(len(free))):
            cols[free[k]] = axes[k][rem % sizes[k]]
            rem //= sizes[k]
        n = len(idx)
        ok = np.ones(n, dtype=bool)
        for l, key in fill.items():
            used = np.zeros(n)
            for g in scenario.link_groups[l][:-1]:
                used = used + cols[(g, l)]
            cols[key] = caps[l] - used
            ok &= cols[key] >= -1e-12
        w = np.zeros(n)
        for u in users:
            spec = scenario.user[u]
            xu = np.full(n, spec.utility.satiation)
            for l in spec.route:
                xu = np.minimum(xu, cols[(spec.group_id, l)])
            xu = np.maximum(xu, 0.0)
            if spec.utility.kind == "log":
                w += spec.utility.a * np.log1p(spec.utility.b * xu)
            else:
                w += spec.utility.a * xu - 0.5 * spec.utility.b * xu * xu
        w = np.where(ok, w, -np.inf)
        k = int(np.argmax(w))
        if w[k] > best_w:
            best_w = float(w[k])
            best_y = {key: float(v[k]) for key, v in cols.items()}
    return best_w, best_y


def brute_force_optimum(
    scenario: NetworkScenario, grid_step: float = 0.01, shadow_prices: bool = True
) -> CentralizedSolution:
    """Exhaustive grid search; independent of the dual method.

    Shadow prices come from re-solving with perturbed capacities; pass
    ``shadow_prices=False`` to skip that and report ``nan`` instead.
    """
    if len(scenario.users) > BRUTE_FORCE_MAX_USERS or len(scenario.links) > BRUTE_FORCE_MAX_LINKS:
        raise OracleError(
            f"brute force limited to {BRUTE_FORCE_MAX_USERS} users and "
            f"{BRUTE_FORCE_MAX_LINKS} links"
        )
    welfare, y = _grid_welfare(scenario, grid_step)
    rates = {}
    for u in scenario.user_ids:
        spec = scenario.user[u]
        rates[u] = max(0.0, min([spec.utility.satiation] + [y[(spec.group_id, l)] for l in spec.route]))
    # shadow prices: central differences of the optimal welfare in each capacity
    h = 10 * grid_step
    shadow = {}
    for l in sorted(scenario.link):
        if not shadow_prices:
            shadow[l] = math.nan
            continue
        c = scenario.link[l].capacity
        up, _ = _grid_welfare(scenario, grid_step, {l: c + h})
        down, _ = _grid_welfare(scenario, grid_step, {l: max(c - h, 0.0)})
        shadow[l] = max(0.0, (up - down) / (c + h - max(c - h, 0.0)))
    return CentralizedSolution(
        rates=rates,
        group_bandwidth=_bandwidth(scenario, rates),
        shadow_prices=shadow,
        welfare=welfare,
        kkt_residual=math.nan,
        converged=True,
    )
