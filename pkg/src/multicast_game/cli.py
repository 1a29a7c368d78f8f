"""Command line interface: validate, outcome, equilibrate, oracle, report.

Exit codes: 0 success, 1 validation or guard failure (or failed checks),
2 parse error or missing artifacts, 3 non-convergence.

Every numeric option can also be set through an environment variable named
``MULTICAST_GAME_<OPTION>`` (for example ``MULTICAST_GAME_TOL_FOC=1e-7``);
explicit flags win over the environment.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .checker import CheckerConfig, run_all
from .equilibrium import DynamicsConfig, EquilibriumResult, find_equilibrium, payoff
from .mechanism import MechanismError, compute_link_view, outcome, strict_budget_transfer
from .model import NetworkScenario, validate_scenario
from .oracle import OracleError, brute_force_optimum, solve_centralized
from .scenario_io import (
    ParseError,
    dump_profile,
    dump_scenario,
    format_records,
    load_profile,
    load_scenario,
    parse_records,
)

EXIT_OK, EXIT_INVALID, EXIT_PARSE, EXIT_NONCONVERGED = 0, 1, 2, 3
ENV_PREFIX = "MULTICAST_GAME_"

RUN_FILES = ("scenario.txt", "profile.txt", "result.txt", "checks.txt", "trace.txt", "oracle.txt")


def _env(name: str, default):
    return os.environ.get(ENV_PREFIX + name.upper(), default)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _render(sections, fmt: str) -> str:
    if fmt == "records":
        return format_records(sections)
    lines = []
    for name, rows in sections:
        lines.append(f"{name}:")
        for key, value in rows:
            if isinstance(value, float):
                value = f"{value:.10g}"
            lines.append(f"  {key:<28} {value}")
    return "\n".join(lines) + "\n"


def _load_valid(path: str) -> tuple[NetworkScenario | None, int, str]:
    try:
        scenario = load_scenario(path)
    except FileNotFoundError:
        return None, EXIT_PARSE, f"error: no such file {path}\n"
    except ParseError as exc:
        return None, EXIT_PARSE, f"error: {path}: {exc}\n"
    report = validate_scenario(scenario)
    if not report.ok:
        return None, EXIT_INVALID, "".join(f"error: {e}\n" for e in report.errors)
    return scenario, EXIT_OK, ""


def _dynamics_config(args) -> DynamicsConfig:
    return DynamicsConfig(
        max_iterations=args.max_iters,
        damping=args.damping,
        foc_tolerance=args.tol_foc,
        seed=args.seed,
    )


def _checker_config(args) -> CheckerConfig:
    return CheckerConfig(
        stationarity=args.tol_foc, budget=args.tol_budget, efficiency=args.tol_welfare
    )


# -- commands ----------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError:
        sys.stderr.write(f"error: no such file {args.scenario}\n")
        return EXIT_PARSE
    except ParseError as exc:
        sys.stderr.write(f"error: {args.scenario}: {exc}\n")
        return EXIT_PARSE
    report = validate_scenario(scenario)
    rows = [("ok", report.ok)]
    rows += [(f"error.{k}", e) for k, e in enumerate(report.errors)]
    rows += [(f"warning.{k}", w) for k, w in enumerate(report.warnings)]
    rows += [(f"groups.{l}", n) for l, n in sorted(report.competition.items())]
    _emit(_render([("validation", rows)], args.format), args.out)
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_outcome(args) -> int:
    scenario, code, msg = _load_valid(args.scenario)
    if scenario is None:
        sys.stderr.write(msg)
        return code
    try:
        profile = load_profile(args.profile, scenario)
    except FileNotFoundError:
        sys.stderr.write(f"error: no such file {args.profile}\n")
        return EXIT_PARSE
    except ParseError as exc:
        sys.stderr.write(f"error: {args.profile}: {exc}\n")
        return EXIT_PARSE
    result = outcome(profile, scenario)
    if args.strict_balance:
        try:
            result = strict_budget_transfer(result, profile, scenario)
        except MechanismError as exc:
            sys.stderr.write(f"error: {exc}\n")
            return EXIT_INVALID
    sections = [
        ("allocation", [(u, result.allocation[u]) for u in scenario.user_ids]),
        ("tax_total", [(u, result.tax_total[u]) for u in scenario.user_ids]),
        (
            "tax_by_link",
            [(f"{u}.{l}", t) for (u, l), t in sorted(result.tax_by_link.items())],
        ),
        (
            "components",
            [
                (f"{u}.{l}.{name}", value)
                for (u, l), comp in sorted(result.components.items())
                for name, value in comp.items()
            ],
        ),
        ("budget", [("residual", result.budget_residual)]),
    ]
    _emit(_render(sections, args.format), args.out)
    return EXIT_OK


def _result_sections(result: EquilibriumResult, scenario: NetworkScenario):
    rep = result.report
    rows = [
        ("converged", result.converged),
        ("iterations", result.iterations),
        ("max_foc_residual", result.max_foc_residual),
        ("max_deviation_gain", result.max_deviation_gain),
        ("max_fd_mismatch", rep.max_fd_mismatch if rep else math.nan),
    ]
    msgs = []
    for u in scenario.user_ids:
        m = result.profile[u]
        msgs.append((f"{u}.x", m.x))
        msgs += [(f"{u}.pi.{l}", p) for l, p in sorted(m.pi.items())]
    return [("equilibrium", rows), ("messages", msgs)]


def _oracle_sections(solution):
    return [
        ("rates", sorted(solution.rates.items())),
        ("shadow_prices", sorted(solution.shadow_prices.items())),
        (
            "summary",
            [
                ("welfare", solution.welfare),
                ("kkt_residual", solution.kkt_residual),
                ("converged", solution.converged),
                ("iterations", solution.iterations),
            ],
        ),
    ]


def _equilibrate_one(scenario_path: str, out_dir: str | None, args) -> tuple[int, str]:
    scenario, code, msg = _load_valid(scenario_path)
    if scenario is None:
        return code, msg
    result = find_equilibrium(scenario, _dynamics_config(args))
    solution = solve_centralized(scenario)
    checks = run_all(
        result.profile, scenario, _checker_config(args), solution, certified=result.converged
    )
    check_rows = [(c.name, f"{c.residual!r} {c.threshold!r} {c.status}") for c in checks.checks]
    check_rows.append(("overall", "pass" if checks.passed else "fail"))
    text = _render(_result_sections(result, scenario) + [("checks", check_rows)], args.format)
    if out_dir:
        run = Path(out_dir)
        run.mkdir(parents=True, exist_ok=True)
        (run / "scenario.txt").write_text(dump_scenario(scenario))
        (run / "profile.txt").write_text(dump_profile(result.profile))
        (run / "result.txt").write_text(format_records(_result_sections(result, scenario)))
        (run / "checks.txt").write_text(checks.to_text())
        trace = [(f"{t.iteration}", f"{t.max_message_change!r} {t.foc_residual!r}") for t in result.trace]
        (run / "trace.txt").write_text(format_records([("trace", trace)]))
        (run / "oracle.txt").write_text(format_records(_oracle_sections(solution)))
    if not result.converged:
        return EXIT_NONCONVERGED, text
    return (EXIT_OK if checks.passed else EXIT_INVALID), text


def _batch_worker(item):
    path, out_dir, args = item
    return path, *_equilibrate_one(path, out_dir, args)


def cmd_equilibrate(args) -> int:
    if args.batch:
        paths = sorted(str(p) for p in Path(args.batch).glob("*.txt"))
        if not paths:
            sys.stderr.write(f"error: no scenario files in {args.batch}\n")
            return EXIT_PARSE
        base = Path(args.out or "runs")
        items = [(p, str(base / Path(p).stem), args) for p in paths]
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_batch_worker, items))
        worst = EXIT_OK
        for path, code, _ in results:
            sys.stdout.write(f"{path}\t{code}\n")
            worst = max(worst, code)
        return worst
    code, text = _equilibrate_one(args.scenario, args.out, args)
    stream = sys.stdout if code in (EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED) else sys.stderr
    stream.write(text)
    return code


def cmd_oracle(args) -> int:
    scenario, code, msg = _load_valid(args.scenario)
    if scenario is None:
        sys.stderr.write(msg)
        return code
    if args.brute_force:
        try:
            solution = brute_force_optimum(scenario, args.grid_step)
        except OracleError as exc:
            sys.stderr.write(f"error: {exc}\n")
            return EXIT_INVALID
    else:
        solution = solve_centralized(scenario)
    _emit(_render(_oracle_sections(solution), args.format), args.out)
    if not args.brute_force and not solution.converged:
        return EXIT_NONCONVERGED
    return EXIT_OK


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    missing = [f for f in RUN_FILES if not (run / f).is_file()]
    if missing:
        sys.stderr.write(f"error: {run} lacks {', '.join(missing)}\n")
        return EXIT_PARSE
    try:
        scenario = load_scenario(run / "scenario.txt")
        profile = load_profile(run / "profile.txt", scenario)
    except ParseError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    trace = parse_records((run / "trace.txt").read_text()).get("trace", {})
    oracle = parse_records((run / "oracle.txt").read_text())

    conv = [[k, *v.split()] for k, v in trace.items()]
    convergence = _csv(["iteration", "max_message_change", "foc_residual"], conv)

    result = outcome(profile, scenario)
    shadow = oracle.get("shadow_prices", {})
    price_rows = []
    for l in sorted(scenario.link):
        if not scenario.link_groups.get(l):
            continue
        view = compute_link_view(profile, scenario, l)
        for g in view.groups:
            price_rows.append([l, g, repr(view.P[g]), shadow.get(l, "nan")])
    prices = _csv(["link", "group", "price", "shadow_price"], price_rows)

    pay_rows = []
    for u in scenario.user_ids:
        spec = scenario.user[u]
        pay_rows.append(
            [
                u,
                repr(profile[u].x),
                repr(spec.utility.value(profile[u].x)),
                repr(result.tax_total[u]),
                repr(payoff(profile, scenario, u)),
            ]
        )
    payoffs = _csv(["user", "rate", "utility", "tax", "payoff"], pay_rows)

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text(convergence)
        (out / "prices.csv").write_text(prices)
        (out / "payoffs.csv").write_text(payoffs)
    else:
        sys.stdout.write("# convergence\n" + convergence + "# prices\n" + prices + "# payoffs\n" + payoffs)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=int(_env("seed", 0)))
    common.add_argument("--tol-foc", type=float, default=float(_env("tol_foc", 1e-6)))
    common.add_argument("--tol-budget", type=float, default=float(_env("tol_budget", 1e-8)))
    common.add_argument("--tol-welfare", type=float, default=float(_env("tol_welfare", 1e-3)))
    common.add_argument("--max-iters", type=int, default=int(_env("max_iters", 2000)))
    common.add_argument("--damping", type=float, default=float(_env("damping", 0.5)))
    common.add_argument(
        "--format", choices=("text", "records"), default=_env("format", "records")
    )
    common.add_argument("--out", default=_env("out", None))

    parser = argparse.ArgumentParser(
        prog="multicast-game", description="Multi-rate multicast game form engine."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("outcome", parents=[common], help="allocation and taxes of a profile")
    p.add_argument("scenario")
    p.add_argument("profile")
    p.add_argument("--strict-balance", action="store_true")
    p.set_defaults(func=cmd_outcome)

    p = sub.add_parser("equilibrate", parents=[common], help="best-response dynamics + checks")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--batch", default=None, help="directory of scenario files")
    p.set_defaults(func=cmd_equilibrate)

    p = sub.add_parser("oracle", parents=[common], help="centralized optimum")
    p.add_argument("scenario")
    p.add_argument("--brute-force", action="store_true")
    p.add_argument("--grid-step", type=float, default=0.01)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", parents=[common], help="tables from an equilibrate run dir")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    if args.command == "equilibrate" and not (args.scenario or args.batch):
        sys.stderr.write("error: equilibrate needs a scenario or --batch\n")
        return EXIT_PARSE
    try:
        return args.func(args)
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
