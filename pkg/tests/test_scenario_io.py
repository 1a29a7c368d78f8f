import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_profile
from multicast_game.fixtures import FIXTURES
from multicast_game.scenario_io import (
    ParseError,
    dump_profile,
    dump_scenario,
    format_records,
    parse_profile,
    parse_records,
    parse_scenario,
)

GOOD = """format-version 1
# two groups on one link
[constants]
gamma=2 gamma_hat=0.5
[links]
l1 capacity=10
[users]
A1 group=A route=l1 utility=log a=1 b=1
B1 group=B route=l1 utility=quadratic a=3 b=1
"""


def test_parse_example():
    s = parse_scenario(GOOD)
    assert s.gamma == 2.0 and s.gamma_hat == 0.5
    assert s.link["l1"].capacity == 10.0
    assert s.user["B1"].utility.kind == "quadratic"


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_scenario_round_trip(name):
    s = FIXTURES[name]()
    again = parse_scenario(dump_scenario(s))
    assert again == s
    assert dump_scenario(again) == dump_scenario(s)


@settings(max_examples=30, deadline=None)
@given(name=st.sampled_from(sorted(FIXTURES)), seed=st.integers(0, 1000))
def test_profile_round_trip_is_exact(name, seed):
    s = FIXTURES[name]()
    prof = random_profile(s, np.random.default_rng(seed))
    assert parse_profile(dump_profile(prof), s) == prof


def test_missing_capacity_reports_line():
    text = GOOD.replace("l1 capacity=10", "l1")
    with pytest.raises(ParseError) as err:
        parse_scenario(text)
    assert err.value.line == 6
    assert err.value.field == "capacity"


@pytest.mark.parametrize(
    "text, field",
    [
        ("", "format-version"),
        ("format-version 2\n", "format-version"),
        (GOOD.replace("a=1 b=1", "a=x b=1"), "a"),
        (GOOD.replace("utility=log", "utility=cubic"), "utility"),
        (GOOD.replace("capacity=10", "capacity=10 colour=red"), "colour"),
    ],
)
def test_parse_errors_name_the_field(text, field):
    with pytest.raises(ParseError) as err:
        parse_scenario(text)
    assert err.value.field == field


def test_profile_errors():
    s = parse_scenario(GOOD)
    with pytest.raises(ParseError):
        parse_profile("format-version 1\n[messages]\nA1 x=1\n", s)  # B1 missing
    with pytest.raises(ParseError) as err:
        parse_profile("format-version 1\n[messages]\nA1 x=1 pi.l9=1\nB1 x=1\n", s)
    assert err.value.field == "pi.l9"
    with pytest.raises(ParseError):
        parse_profile("format-version 1\n[messages]\nA1 x=-1\nB1 x=1\n", s)
    prof = parse_profile("format-version 1\n[messages]\nA1 x=1\nB1 x=2 pi.l1=0.5\n", s)
    assert prof["A1"].pi == {"l1": 0.0}


def test_records_round_trip():
    text = format_records([("a", [("x", 0.1), ("ok", True), ("n", 3)])])
    assert text == "[a]\nx\t0.1\nok\ttrue\nn\t3\n"
    assert parse_records(text) == {"a": {"x": "0.1", "ok": "true", "n": "3"}}
