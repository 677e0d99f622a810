"""Command line entry points."""

from __future__ import annotations

import csv
import io
import json

import pytest
from click.testing import CliRunner

from amv_lab.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, cli
from amv_lab.reports import EVAL_COLUMNS
from tests.conftest import data_file


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


def test_eval_csv(runner):
    result = runner.invoke(cli, ["eval", "--config", str(data_file("eval_euclid.json"))])
    assert result.exit_code == EXIT_OK, result.output
    rows = list(csv.reader(io.StringIO(result.output)))
    assert tuple(rows[0]) == EVAL_COLUMNS
    summaries = [row for row in rows[1:] if row[1] == "0.0"]
    assert [row[4] for row in summaries] == ["converged", "converged"]
    assert float(summaries[0][2]) == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_eval_json_to_file(runner, tmp_path):
    out = tmp_path / "eval.json"
    args = ["eval", "--config", str(data_file("eval_euclid.json")), "--format", "json", "--out", str(out)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    body = json.loads(out.read_text(encoding="utf-8"))
    assert body["kind"] == "eval"
    assert len(body["points"]) == 2
    assert "duration" not in body


def test_eval_weighted_json(runner):
    result = runner.invoke(cli, ["eval", "--config", str(data_file("eval_bose.json")), "--timings"])
    assert result.exit_code == EXIT_OK, result.output
    body = json.loads(result.output)
    assert body["space"]["kind"] == "weighted"
    point = body["points"][0]
    # r^2 / (6 (r^2 + 8)) at (1, 1)
    assert point["verdict"] == "converged"
    assert point["value"] == pytest.approx(0.0, abs=1e-9)
    assert point["value_error"] < 1e-8
    assert len(point["trace"]) == 12
    assert body["duration"] >= 0.0


def test_eval_bad_config(runner):
    result = runner.invoke(cli, ["eval", "--config", str(data_file("eval_bad_ratio.json"))])
    assert result.exit_code == EXIT_CONFIG
    assert "schedule.ratio" in result.output


def test_eval_missing_config(runner, tmp_path):
    result = runner.invoke(cli, ["eval", "--config", str(tmp_path / "absent.json")])
    assert result.exit_code == EXIT_CONFIG


def test_green(runner, tmp_path):
    exported = tmp_path / "delta.txt"
    args = ["green", "--config", str(data_file("green_weighted.json")), "--export-operator", str(exported)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    body = json.loads(result.output)
    assert body["kind"] == "green"
    assert body["atoms"] == 225
    assert exported.read_text(encoding="utf-8").startswith("# 225 225 ")


def test_poisson(runner):
    result = runner.invoke(cli, ["poisson", "--config", str(data_file("poisson_linear.json"))])
    assert result.exit_code == EXIT_OK, result.output
    rows = list(csv.reader(io.StringIO(result.output)))
    assert rows[0] == ["atom_id", "x0", "weight", "u"]
    for atom_id, x, _, u in rows[1:]:
        assert float(u) == pytest.approx(2.0 * float(x) + 1.0, abs=1e-9), atom_id


def test_constants(runner, tmp_path):
    out = tmp_path / "constants.json"
    result = runner.invoke(cli, ["constants", "--samples", "20000", "--seed", "1", "--out", str(out)])
    assert result.exit_code == EXIT_OK, result.output
    assert json.loads(out.read_text(encoding="utf-8"))["samples"] == 20_000


def test_verify_unknown_suite(runner):
    result = runner.invoke(cli, ["verify", "--suite", "hyperbolic"])
    assert result.exit_code == EXIT_CONFIG
    assert "(suite)" in result.output


def test_verify_heisenberg_without_constants(runner, tmp_path):
    out = tmp_path / "report.json"
    args = ["verify", "--suite", "heisenberg", "--constants", str(tmp_path / "absent.json"), "--out", str(out)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_NUMERIC
    body = json.loads(out.read_text(encoding="utf-8"))
    assert body["passed"] is False
    assert [c["case_id"] for c in body["cases"]] == ["constants"]
    assert body["cases"][0]["pass"] is False


def test_verify_csv(runner):
    result = runner.invoke(cli, ["verify", "--suite", "submanifold", "--format", "csv"])
    assert result.exit_code == EXIT_OK, result.output
    rows = list(csv.reader(io.StringIO(result.output)))
    assert rows[0][0] == "case_id"
    assert all(row[5] == "true" for row in rows[1:])
