import argparse
import json

import pytest

from ecoacc.cli import EXIT_INFEASIBLE, EXIT_IO, EXIT_OK, main, parse_seeds


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("0-4") == [0, 1, 2, 3, 4]
    assert parse_seeds("1,4,7") == [1, 4, 7]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_seeds(",")


def test_plan_writes_policy_and_nominal(tmp_path, capsys):
    assert main(["plan", "--fixed-offsets", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "policy.npz").exists()
    lines = (tmp_path / "nominal.csv").read_text().splitlines()
    assert lines[0] == "position,v,t,T_w"
    assert len(lines) == 262
    assert "travel time" in capsys.readouterr().out


def test_plan_infeasible_deadline(tmp_path):
    assert main(["plan", "--t-f", "100", "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    assert main(["simulate", "--seed", "0", "--t-f", "100", "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_missing_file_is_io_error(tmp_path):
    assert main(["plan", "--corridor", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path)]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["plan", "--vehicle", str(bad), "--out", str(tmp_path)]) == EXIT_IO


def test_simulate_outputs(tmp_path):
    code = main(["simulate", "--seed", "3", "--controller", "acc-only", "--out", str(tmp_path)])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "trace_acc-only_3.json").read_text())
    assert summary["completed"] and summary["red_crossings"] == 0
    assert (tmp_path / "trace_acc-only_3.csv").read_text().startswith("t,position,v,")


def test_compare_and_report(tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--seeds", "0", "--out", str(out)]) == EXIT_OK
    result = json.loads((out / "compare.json").read_text())
    assert result["paired"] == 1 and result["median_energy_delta"] < 0
    rep = tmp_path / "rep"
    assert main(["report", "--seed", "1", "--out", str(rep)]) == EXIT_OK
    for name in ("reports.csv", "velocity.png", "energy.png", "pareto.png"):
        assert (rep / name).exists()


def test_sweep(tmp_path):
    assert main(["sweep", "--lambdas", "0,100", "--seeds", "0", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "pareto.png").exists()


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["fly"])
