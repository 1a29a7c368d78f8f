import math

import pytest

from conftest import optimum
from multicast_game.fixtures import FIXTURES, multicast_tree, two_link_line, two_users
from multicast_game.model import LOG, UtilityFunction, make_scenario
from multicast_game.oracle import (
    OracleError,
    brute_force_optimum,
    kkt_residuals,
    rate_cap,
    solve_centralized,
)

SMALL = sorted(set(FIXTURES) - {"triangle"})


def test_two_users_closed_form():
    sol = solve_centralized(two_users())
    assert sol.converged
    assert sol.rates["A1"] == pytest.approx(2.0, abs=1e-8)
    assert sol.rates["B1"] == pytest.approx(2.0, abs=1e-8)
    assert sol.shadow_prices["l1"] == pytest.approx(1 / 3, abs=1e-8)
    assert sol.welfare == pytest.approx(2 * math.log(3), abs=1e-9)


def test_two_link_line_hand_solution():
    # stationarity: 2/(1+xA) = l1 + l2, 1/(1+xB) = l1, 2/(1+2 xC) = l2, both links tight
    sol = solve_centralized(two_link_line())
    expected = {"A1": 1.625, "B1": 3.375, "C1": 1.375}
    for u, x in expected.items():
        assert sol.rates[u] == pytest.approx(x, abs=1e-8)
    assert sol.shadow_prices["l1"] == pytest.approx(8 / 35, abs=1e-8)
    assert sol.shadow_prices["l2"] == pytest.approx(8 / 15, abs=1e-8)


def test_uncongested_link_has_zero_price():
    sol = optimum("uncongested")
    assert sol.shadow_prices["l1"] == 0.0
    assert sol.rates == {"A1": 2.0, "B1": 3.0}


def test_group_bandwidth_is_member_maximum():
    s = multicast_tree()
    sol = optimum("multicast_tree")
    for l in s.link:
        for g in s.link_groups[l]:
            members = s.group_members_on_link(g, l)
            assert sol.group_bandwidth[(g, l)] == max(sol.rates[u] for u in members)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_kkt_residuals_small(name):
    s = FIXTURES[name]()
    sol = optimum(name)
    report = kkt_residuals(s, sol)
    assert report.primal_infeasibility <= 1e-9
    assert report.dual_infeasibility == 0.0
    assert report.complementary_slackness <= 1e-9
    assert max(report.stationarity.values()) <= 1e-9


@pytest.mark.parametrize("name", SMALL)
def test_brute_force_agrees(name):
    s = FIXTURES[name]()
    sol = optimum(name)
    grid = brute_force_optimum(s, grid_step=0.01)
    assert grid.welfare <= sol.welfare + 1e-9
    assert sol.welfare - grid.welfare <= 1e-3 * max(1.0, abs(sol.welfare))
    for l, lam in sol.shadow_prices.items():
        assert grid.shadow_prices[l] == pytest.approx(lam, abs=1e-3)


def test_brute_force_guard():
    log = UtilityFunction(LOG, 1.0, 1.0)
    users = [(f"U{k}", f"G{k}", ["l1"], log) for k in range(6)]
    with pytest.raises(OracleError):
        brute_force_optimum(make_scenario([("l1", 5.0)], users))


def test_rate_cap_is_route_bottleneck_or_satiation():
    s = two_link_line()
    assert rate_cap(s, "A1") == 3.0
    s2 = FIXTURES["uncongested"]()
    assert rate_cap(s2, "A1") == 2.0


def test_shared_members_sum_shadow_price():
    """Tied members of one group share the link price through their marginals."""
    sol = optimum("symmetric_tied")
    assert sum(v for (u, l), v in sol.member_prices.items() if u.startswith("A")) == pytest.approx(
        sol.shadow_prices["l1"], abs=1e-9
    )
