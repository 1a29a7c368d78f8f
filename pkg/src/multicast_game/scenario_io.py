"""Line-based text format for scenarios and message profiles.

A file starts with ``format-version 1`` and is split into bracketed sections.
Comments start with ``#``.  Records are ``id key=value ...`` and are split
with :mod:`shlex`, so values may be quoted.

    format-version 1
    [constants]
    gamma=10 gamma_hat=10
    [links]
    l1 capacity=10
    [users]
    A1 group=A route=l1,l2 utility=log a=1 b=1
    [messages]
    A1 x=5 pi.l1=0.25 pi.l2=0

Scenario files use the first three sections; profile files use
``[messages]`` and may also carry a scenario.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .mechanism import Message
from .model import UTILITY_KINDS, LinkSpec, NetworkScenario, UserSpec, UtilityFunction

FORMAT_VERSION = "1"
SECTIONS = ("constants", "links", "users", "messages")


class ParseError(ValueError):
    """Malformed input; carries the 1-based line number and offending field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}" if line is not None else "input"
        if field:
            where += f", field {field!r}"
        super().__init__(f"{where}: {message}")


@dataclass
class _Record:
    line: int
    ident: str | None
    fields: dict[str, str]


def _split(text: str, lineno: int) -> list[str]:
    try:
        return shlex.split(text, comments=True)
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _parse_sections(text: str) -> dict[str, list[_Record]]:
    sections: dict[str, list[_Record]] = {}
    current = None
    version_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _split(raw, lineno)
        if not tokens:
            continue
        if not version_seen:
            if tokens[0] != "format-version" or len(tokens) != 2:
                raise ParseError("file must start with 'format-version 1'", lineno, "format-version")
            if tokens[1] != FORMAT_VERSION:
                raise ParseError(f"unsupported format version {tokens[1]!r}", lineno, "format-version")
            version_seen = True
            continue
        if tokens[0].startswith("[") and tokens[0].endswith("]") and len(tokens) == 1:
            current = tokens[0][1:-1].strip()
            if current not in SECTIONS:
                raise ParseError(f"unknown section {current!r}", lineno)
            if current in sections:
                raise ParseError(f"duplicate section {current!r}", lineno)
            sections[current] = []
            continue
        if current is None:
            raise ParseError("record outside any section", lineno)
        ident = None
        fields: dict[str, str] = {}
        for k, tok in enumerate(tokens):
            if "=" not in tok:
                if k == 0 and current != "constants":
                    ident = tok
                    continue
                raise ParseError(f"expected key=value, got {tok!r}", lineno)
            key, value = tok.split("=", 1)
            if not key:
                raise ParseError("empty key", lineno)
            if key in fields:
                raise ParseError("repeated field", lineno, key)
            fields[key] = value
        if current != "constants" and ident is None:
            raise ParseError("record needs a leading id", lineno)
        sections[current].append(_Record(lineno, ident, fields))
    if not version_seen:
        raise ParseError("empty file; expected 'format-version 1'", None, "format-version")
    return sections


def _number(rec: _Record, key: str, default: float | None = None) -> float:
    if key not in rec.fields:
        if default is not None:
            return default
        raise ParseError("missing field", rec.line, key)
    try:
        return float(rec.fields[key])
    except ValueError:
        raise ParseError(f"not a number: {rec.fields[key]!r}", rec.line, key) from None


def _check_keys(rec: _Record, allowed: Iterable[str]) -> None:
    allowed = set(allowed)
    for key in rec.fields:
        if key not in allowed and not (key.startswith("pi.") and "pi.*" in allowed):
            raise ParseError("unknown field", rec.line, key)


def _scenario_from_sections(sections: dict[str, list[_Record]]) -> NetworkScenario:
    gamma, gamma_hat = 1.0, 1.0
    for rec in sections.get("constants", []):
        _check_keys(rec, ("gamma", "gamma_hat"))
        if "gamma" in rec.fields:
            gamma = _number(rec, "gamma")
        if "gamma_hat" in rec.fields:
            gamma_hat = _number(rec, "gamma_hat")
    if "links" not in sections:
        raise ParseError("missing [links] section")
    if "users" not in sections:
        raise ParseError("missing [users] section")
    links = []
    for rec in sections["links"]:
        _check_keys(rec, ("capacity",))
        links.append(LinkSpec(rec.ident, _number(rec, "capacity")))
    users = []
    for rec in sections["users"]:
        _check_keys(rec, ("group", "route", "utility", "a", "b"))
        for key in ("group", "route", "utility"):
            if key not in rec.fields:
                raise ParseError("missing field", rec.line, key)
        kind = rec.fields["utility"]
        if kind not in UTILITY_KINDS:
            raise ParseError(f"unknown utility {kind!r}", rec.line, "utility")
        route = tuple(r for r in rec.fields["route"].split(",") if r)
        try:
            utility = UtilityFunction(kind, _number(rec, "a"), _number(rec, "b"))
        except ParseError:
            raise
        except ValueError as exc:
            raise ParseError(str(exc), rec.line, "a") from None
        users.append(UserSpec(rec.ident, rec.fields["group"], route, utility))
    return NetworkScenario(tuple(links), tuple(users), gamma, gamma_hat)


def parse_scenario(text: str) -> NetworkScenario:
    return _scenario_from_sections(_parse_sections(text))


def parse_profile(text: str, scenario: NetworkScenario) -> dict[str, Message]:
    """Messages for every user of ``scenario``; route prices default to 0."""
    sections = _parse_sections(text)
    if "messages" not in sections:
        raise ParseError("missing [messages] section")
    profile: dict[str, Message] = {}
    for rec in sections["messages"]:
        _check_keys(rec, ("x", "pi.*"))
        if rec.ident not in scenario.user:
            raise ParseError(f"unknown user {rec.ident!r}", rec.line)
        if rec.ident in profile:
            raise ParseError(f"duplicate message for {rec.ident!r}", rec.line)
        route = scenario.user[rec.ident].route
        pi = {}
        for key in rec.fields:
            if key.startswith("pi.") and key[3:] not in route:
                raise ParseError("price for a link off the user's route", rec.line, key)
        for l in route:
            pi[l] = _number(rec, f"pi.{l}", 0.0)
        x = _number(rec, "x")
        try:
            profile[rec.ident] = Message(x, pi)
        except ValueError as exc:
            raise ParseError(str(exc), rec.line, "x") from None
    missing = [u for u in scenario.user_ids if u not in profile]
    if missing:
        raise ParseError(f"no message for users {missing}")
    return profile


def _fmt(value: float) -> str:
    return repr(float(value))


def dump_scenario(scenario: NetworkScenario) -> str:
    lines = [f"format-version {FORMAT_VERSION}", "[constants]"]
    lines.append(f"gamma={_fmt(scenario.gamma)} gamma_hat={_fmt(scenario.gamma_hat)}")
    lines.append("[links]")
    for spec in scenario.links:
        lines.append(f"{spec.link_id} capacity={_fmt(spec.capacity)}")
    lines.append("[users]")
    for spec in scenario.users:
        u = spec.utility
        lines.append(
            f"{spec.user_id} group={spec.group_id} route={','.join(spec.route)} "
            f"utility={u.kind} a={_fmt(u.a)} b={_fmt(u.b)}"
        )
    return "\n".join(lines) + "\n"


def dump_profile(profile: Mapping[str, Message]) -> str:
    lines = [f"format-version {FORMAT_VERSION}", "[messages]"]
    for uid in sorted(profile):
        msg = profile[uid]
        prices = " ".join(f"pi.{l}={_fmt(p)}" for l, p in sorted(msg.pi.items()))
        lines.append(f"{uid} x={_fmt(msg.x)} {prices}".rstrip())
    return "\n".join(lines) + "\n"


def load_scenario(path: str | Path) -> NetworkScenario:
    return parse_scenario(Path(path).read_text())


def load_profile(path: str | Path, scenario: NetworkScenario) -> dict[str, Message]:
    return parse_profile(Path(path).read_text(), scenario)


def format_records(sections: Iterable[tuple[str, Iterable[tuple[str, object]]]]) -> str:
    """``key<TAB>value`` lines grouped under ``[section]`` headers; floats via repr."""
    out = []
    for name, rows in sections:
        out.append(f"[{name}]")
        for key, value in rows:
            if isinstance(value, float):
                value = repr(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out.append(f"{key}\t{value}")
    return "\n".join(out) + "\n"


def parse_records(text: str) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for raw in text.splitlines():
        if raw.startswith("[") and raw.endswith("]"):
            current = raw[1:-1]
            sections[current] = {}
        elif raw and current is not None:
            key, _, value = raw.partition("\t")
            sections[current][key] = value
    return sections
