"""Small reference scenarios used by tests, the acceptance suite and the CLI."""

from __future__ import annotations

from .model import LOG, QUADRATIC, NetworkScenario, UtilityFunction, make_scenario

GAMMA = 10.0


def _log(a: float = 1.0, b: float = 1.0) -> UtilityFunction:
    return UtilityFunction(LOG, a, b)


def _quad(a: float, b: float) -> UtilityFunction:
    return UtilityFunction(QUADRATIC, a, b)


def two_users(gamma: float = GAMMA) -> NetworkScenario:
    """One link of capacity 4 shared by two single-user groups."""
    return make_scenario(
        [("l1", 4.0)],
        [("A1", "A", ["l1"], _log()), ("B1", "B", ["l1"], _log())],
        gamma,
        gamma,
    )


def symmetric_tied(gamma: float = GAMMA) -> NetworkScenario:
    """Two groups of two identical log users on one link of capacity 10."""
    return make_scenario(
        [("l1", 10.0)],
        [
            ("A1", "A", ["l1"], _log()),
            ("A2", "A", ["l1"], _log()),
            ("B1", "B", ["l1"], _log()),
            ("B2", "B", ["l1"], _log()),
        ],
        gamma,
        gamma,
    )


def three_groups(gamma: float = GAMMA) -> NetworkScenario:
    """Three heterogeneous single-user groups on one link."""
    return make_scenario(
        [("l1", 6.0)],
        [
            ("A1", "A", ["l1"], _log(1.0, 1.0)),
            ("B1", "B", ["l1"], _log(2.0, 1.0)),
            ("C1", "C", ["l1"], _quad(3.0, 1.0)),
        ],
        gamma,
        gamma,
    )


def two_link_line(gamma: float = GAMMA) -> NetworkScenario:
    """A long route over two links, each also crossed by a local user."""
    return make_scenario(
        [("l1", 5.0), ("l2", 3.0)],
        [
            ("A1", "A", ["l1", "l2"], _log(2.0, 1.0)),
            ("B1", "B", ["l1"], _log(1.0, 1.0)),
            ("C1", "C", ["l2"], _log(1.0, 2.0)),
        ],
        gamma,
        gamma,
    )


def multicast_tree(gamma: float = GAMMA) -> NetworkScenario:
    """Group A receives at two different rates; one member sits behind a bottleneck."""
    return make_scenario(
        [("l1", 8.0), ("l2", 4.0)],
        [
            ("A1", "A", ["l1"], _log(1.0, 1.0)),
            ("A2", "A", ["l1", "l2"], _log(1.0, 1.0)),
            ("B1", "B", ["l1", "l2"], _log(1.0, 1.0)),
        ],
        gamma,
        gamma,
    )


def triangle(gamma: float = GAMMA) -> NetworkScenario:
    """Three links, three groups, each group crossing two links."""
    return make_scenario(
        [("l1", 6.0), ("l2", 5.0), ("l3", 4.0)],
        [
            ("A1", "A", ["l1", "l2"], _log(1.0, 1.0)),
            ("B1", "B", ["l2", "l3"], _log(2.0, 0.5)),
            ("C1", "C", ["l1", "l3"], _quad(2.0, 0.5)),
        ],
        gamma,
        gamma,
    )


def uncongested(gamma: float = GAMMA) -> NetworkScenario:
    """Capacity exceeds total satiation, so no price should survive."""
    return make_scenario(
        [("l1", 20.0)],
        [("A1", "A", ["l1"], _quad(2.0, 1.0)), ("B1", "B", ["l1"], _quad(3.0, 1.0))],
        gamma,
        gamma,
    )


FIXTURES = {
    "two_users": two_users,
    "symmetric_tied": symmetric_tied,
    "three_groups": three_groups,
    "two_link_line": two_link_line,
    "multicast_tree": multicast_tree,
    "triangle": triangle,
    "uncongested": uncongested,
}
