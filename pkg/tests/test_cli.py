import csv
import io

import pytest

from multicast_game.cli import (
    EXIT_INVALID,
    EXIT_NONCONVERGED,
    EXIT_OK,
    EXIT_PARSE,
    RUN_FILES,
    main,
)
from multicast_game.fixtures import symmetric_tied, two_users
from multicast_game.mechanism import Message
from multicast_game.scenario_io import dump_profile, dump_scenario, parse_records


@pytest.fixture
def tied_file(tmp_path):
    path = tmp_path / "tied.txt"
    path.write_text(dump_scenario(symmetric_tied()))
    return path


def _run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_ok_and_invalid(tmp_path, tied_file, capsys):
    code, out, _ = _run(["validate", tied_file], capsys)
    assert code == EXIT_OK
    assert parse_records(out)["validation"]["ok"] == "true"
    bad = tmp_path / "bad.txt"
    bad.write_text(dump_scenario(symmetric_tied()).replace("capacity=10.0", "capacity=-1.0"))
    code, _, _ = _run(["validate", bad], capsys)
    assert code in (EXIT_INVALID, EXIT_PARSE)


def test_parse_error_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text(dump_scenario(symmetric_tied()).replace("l1 capacity=10.0", "l1"))
    code, _, err = _run(["validate", bad], capsys)
    assert code == EXIT_PARSE
    assert "line 5" in err and "capacity" in err
    code, _, _ = _run(["validate", tmp_path / "nope.txt"], capsys)
    assert code == EXIT_PARSE
    assert _run(["frobnicate"], capsys)[0] == EXIT_PARSE


def test_outcome_command(tmp_path, capsys):
    s = two_users()
    scen = tmp_path / "s.txt"
    scen.write_text(dump_scenario(s))
    prof = tmp_path / "p.txt"
    prof.write_text(dump_profile({u: Message(2.0, {"l1": 1 / 3}) for u in s.user_ids}))
    code, out, _ = _run(["outcome", scen, prof, "--strict-balance"], capsys)
    assert code == EXIT_OK
    assert float(parse_records(out)["budget"]["residual"]) == pytest.approx(0.0, abs=1e-12)


def test_equilibrate_and_report(tmp_path, tied_file, capsys):
    run = tmp_path / "run"
    code, out, _ = _run(["equilibrate", tied_file, "--out", run], capsys)
    assert code == EXIT_OK
    records = parse_records(out)
    assert records["equilibrium"]["converged"] == "true"
    assert records["checks"]["overall"] == "pass"
    assert all((run / f).is_file() for f in RUN_FILES)

    code, out, _ = _run(["report", run], capsys)
    assert code == EXIT_OK
    tables = out.split("# ")[1:]
    assert [t.split("\n", 1)[0] for t in tables] == ["convergence", "prices", "payoffs"]
    prices = list(csv.DictReader(io.StringIO(tables[1].split("\n", 1)[1])))
    assert {r["group"] for r in prices} == {"A", "B"}
    assert all(float(r["shadow_price"]) == pytest.approx(1 / 3, abs=1e-6) for r in prices)
    payoffs = list(csv.DictReader(io.StringIO(tables[2].split("\n", 1)[1])))
    assert all(float(r["rate"]) == pytest.approx(5.0, abs=1e-6) for r in payoffs)

    out_dir = tmp_path / "tables"
    assert _run(["report", run, "--out", out_dir], capsys)[0] == EXIT_OK
    assert sorted(p.name for p in out_dir.iterdir()) == ["convergence.csv", "payoffs.csv", "prices.csv"]


def test_report_missing_artifacts(tmp_path, capsys):
    code, _, err = _run(["report", tmp_path], capsys)
    assert code == EXIT_PARSE
    assert "scenario.txt" in err


def test_non_convergence_exit_code(tied_file, capsys):
    code, out, _ = _run(["equilibrate", tied_file, "--max-iters", "0"], capsys)
    assert code == EXIT_NONCONVERGED
    assert parse_records(out)["equilibrium"]["converged"] == "false"


def test_environment_defaults(tied_file, capsys, monkeypatch):
    monkeypatch.setenv("MULTICAST_GAME_MAX_ITERS", "0")
    assert _run(["equilibrate", tied_file], capsys)[0] == EXIT_NONCONVERGED
    # explicit flags win
    assert _run(["equilibrate", tied_file, "--max-iters", "2000"], capsys)[0] == EXIT_OK


def test_equilibrate_is_deterministic(tied_file, capsys):
    first = _run(["equilibrate", tied_file, "--seed", "7"], capsys)
    second = _run(["equilibrate", tied_file, "--seed", "7"], capsys)
    assert first == second


def test_oracle_command(tmp_path, capsys):
    scen = tmp_path / "s.txt"
    scen.write_text(dump_scenario(two_users()))
    code, out, _ = _run(["oracle", scen], capsys)
    assert code == EXIT_OK
    assert float(parse_records(out)["shadow_prices"]["l1"]) == pytest.approx(1 / 3, abs=1e-8)
    code, out, _ = _run(["oracle", scen, "--brute-force", "--format", "text"], capsys)
    assert code == EXIT_OK
    assert "shadow_prices:" in out


def test_batch_mode(tmp_path, capsys):
    src = tmp_path / "scenarios"
    src.mkdir()
    (src / "a.txt").write_text(dump_scenario(two_users()))
    (src / "b.txt").write_text(dump_scenario(symmetric_tied()))
    code, out, _ = _run(["equilibrate", "--batch", src, "--out", tmp_path / "runs"], capsys)
    assert code == EXIT_OK
    assert len(out.strip().splitlines()) == 2
    assert (tmp_path / "runs" / "a" / "checks.txt").is_file()
