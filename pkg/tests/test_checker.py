import math

import numpy as np
import pytest

from conftest import candidate, dynamics, optimum, random_profile
from multicast_game.checker import (
    FAIL,
    PASS,
    SKIP,
    CheckerError,
    check_budget_balance,
    check_common_price,
    check_efficiency,
    check_feasibility,
    check_summed_identity,
    run_all,
    summed_price_gradient,
)
from multicast_game.fixtures import FIXTURES, symmetric_tied
from multicast_game.mechanism import Message, compute_link_view, outcome, zero_profile
from multicast_game.model import make_scenario
from multicast_game.oracle import CentralizedSolution


def _tied_profile(x, p):
    s = symmetric_tied()
    return s, {u: Message(x, {"l1": p}) for u in s.user_ids}


@pytest.mark.parametrize("name", ["two_users", "symmetric_tied", "three_groups", "uncongested"])
def test_dynamics_equilibria_pass_every_check(name):
    s, res = dynamics(name)
    report = run_all(res.profile, s, solution=optimum(name), certified=res.converged)
    assert report.passed, report.to_text()
    assert report["efficiency"].status == PASS


def test_infeasible_profile_skips_equilibrium_checks():
    s, prof = _tied_profile(6.0, 0.5)
    report = run_all(prof, s)
    assert report["feasibility"].status == FAIL
    assert report["feasibility"].residual == pytest.approx(2.0)
    for name in ("eta-zero", "slackness", "common-price", "budget-balance", "efficiency"):
        assert report[name].status == SKIP
    assert not report.passed
    assert report.lines()[-1] == "overall fail"


def test_common_price_spread():
    s = symmetric_tied()
    prof = {"A1": Message(5, {"l1": 0.2}), "A2": Message(5, {"l1": 0.2}),
            "B1": Message(5, {"l1": 0.1}), "B2": Message(5, {"l1": 0.1})}
    check = check_common_price(prof, s, 1e-6)
    assert check.residual == pytest.approx(0.1)
    assert check.status == FAIL


def test_summed_identity_holds_off_equilibrium():
    rng = np.random.default_rng(2)
    for name, make in FIXTURES.items():
        s = make()
        for _ in range(20):
            prof = random_profile(s, rng, tie_prob=0.5)
            assert check_summed_identity(prof, s, 1e-9).status == PASS
            for l in s.link:
                total, closed = summed_price_gradient(compute_link_view(prof, s, l), prof, s)
                assert total == pytest.approx(closed, rel=1e-9, abs=1e-12)


def test_feasibility_on_empty_load():
    s = symmetric_tied()
    check = check_feasibility(zero_profile(s), s)
    assert check.status == PASS
    assert check.details == {"l1": 10.0}


def test_budget_balance_at_tied_profile():
    s, prof = _tied_profile(5.0, 0.5)
    assert check_budget_balance(outcome(prof, s)).status == PASS


def test_efficiency_refuses_uncertified_input():
    s = symmetric_tied()
    prof, _ = candidate("symmetric_tied")
    with pytest.raises(CheckerError):
        check_efficiency(prof, optimum("symmetric_tied"), s, certified=False)
    unconverged = CentralizedSolution({}, {}, {}, 0.0, math.nan, converged=False)
    with pytest.raises(CheckerError):
        check_efficiency(prof, unconverged, s)
    report = run_all(prof, s, solution=optimum("symmetric_tied"), certified=False)
    assert report["efficiency"].status == SKIP


def test_scenario_without_users():
    s = make_scenario([("l1", 1.0)], [])
    report = run_all({}, s)
    assert report.passed
    assert {c.status for c in report.checks} <= {PASS, SKIP}


def test_report_lines_format():
    s, prof = _tied_profile(5.0, 0.5)
    lines = run_all(prof, s).lines()
    name, residual, threshold, status = lines[0].split()
    assert name == "price-stationarity"
    assert float(residual) >= 0 and float(threshold) == 1e-6 and status in (PASS, FAIL)
