import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multicast_game.equilibrium import (  # noqa: E402
    DynamicsConfig,
    construct_candidate_from_optimum,
    find_equilibrium,
    verify_equilibrium,
)
from multicast_game.fixtures import FIXTURES  # noqa: E402
from multicast_game.mechanism import Message  # noqa: E402
from multicast_game.oracle import solve_centralized  # noqa: E402

# wall-clock seconds spent in the cached computations, keyed by fixture name
DYNAMICS_SECONDS: dict[str, float] = {}
ACCEPTANCE_LINES: list[str] = []


@lru_cache(maxsize=None)
def dynamics(name):
    scenario = FIXTURES[name]()
    start = time.perf_counter()
    result = find_equilibrium(scenario, DynamicsConfig())
    DYNAMICS_SECONDS[name] = time.perf_counter() - start
    return scenario, result


@lru_cache(maxsize=None)
def optimum(name):
    return solve_centralized(FIXTURES[name]())


@lru_cache(maxsize=None)
def candidate(name):
    scenario = FIXTURES[name]()
    profile = construct_candidate_from_optimum(scenario, optimum(name))
    return profile, verify_equilibrium(profile, scenario, 1e-6)


def certified_equilibria(name):
    """Every profile certified as an equilibrium for the fixture, with its origin."""
    scenario, result = dynamics(name)
    found = []
    if result.converged:
        found.append(("dynamics", result.profile))
    profile, report = candidate(name)
    if report.passed:
        found.append(("candidate", profile))
    return scenario, found


def random_profile(scenario, rng, price_scale=1.0, tie_prob=0.0, feasible=False):
    """Random messages; optionally force ties inside groups or scale to feasibility."""
    rates = {}
    for u in scenario.user_ids:
        rates[u] = float(rng.uniform(0.0, scenario.max_route_capacity(u)))
        sat = scenario.user[u].utility.satiation
        rates[u] = min(rates[u], sat)
    if tie_prob:
        for members in scenario.groups.values():
            if len(members) > 1 and rng.random() < tie_prob:
                for u in members[1:]:
                    rates[u] = rates[members[0]]
    if feasible:
        worst = 1.0
        for l, groups in scenario.link_groups.items():
            load = sum(
                max(rates[u] for u in scenario.group_members_on_link(g, l)) for g in groups
            )
            if load > 0:
                worst = max(worst, load / scenario.link[l].capacity)
        rates = {u: x / worst * (1 - 1e-9) for u, x in rates.items()}
    return {
        u: Message(rates[u], {l: float(rng.uniform(0, price_scale)) for l in scenario.user[u].route})
        for u in scenario.user_ids
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
