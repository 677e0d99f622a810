"""Report rendering."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from amv_lab.estimator import CONVERGED, DIVERGENT, AmvResult, TracePoint
from amv_lab.exceptions import ConfigError
from amv_lab.reports import (
    EVAL_COLUMNS,
    REPORT_SCHEMA_VERSION,
    clean,
    eval_rows,
    render_csv,
    render_eval,
    render_json,
    render_suite,
    write_report,
)
from amv_lab.suites import SuiteCase, SuiteReport


def _result(verdict=CONVERGED):
    trace = [TracePoint(0.1, 0.5, 1e-12), TracePoint(0.05, 0.5000001, 1e-12)]
    return AmvResult(trace, verdict, 0.5, 1e-9, None, 1e-13, degree=1)


def test_clean():
    cleaned = clean({"a": np.float64(1.5), "b": (np.int64(2), math.nan), "c": np.array([True]), 3: math.inf})
    assert cleaned == {"a": 1.5, "b": [2, None], "c": [True], "3": None}


def test_json_is_sorted_and_versioned():
    text = render_json({"zeta": 1, "alpha": [0.1]})
    assert text.index('"alpha"') < text.index('"schema_version"') < text.index('"zeta"')
    assert json.loads(text)["schema_version"] == REPORT_SCHEMA_VERSION


def test_csv_keeps_full_precision():
    text = render_csv(("x",), [(0.1 + 0.2,), (math.nan,), (None,), (True,)])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows == [["x"], ["0.30000000000000004"], [""], [""], ["true"]]


def test_eval_rows_end_with_summary():
    rows = eval_rows([_result(), _result(DIVERGENT)])
    assert len(rows) == 6
    assert rows[2] == (0, 0.0, 0.5, 1e-9, CONVERGED)
    assert rows[5] == (1, 0.0, None, None, DIVERGENT)


def test_render_eval_csv_and_json():
    points = [(0.0,)]
    table = list(csv.reader(io.StringIO(render_eval(points, [_result()], {}, "csv"))))
    assert tuple(table[0]) == EVAL_COLUMNS
    assert table[-1] == ["0", "0.0", "0.5", "1e-09", CONVERGED]
    body = json.loads(render_eval(points, [_result()], {"seed": 3}, "json"))
    assert body["kind"] == "eval"
    assert body["seed"] == 3
    assert body["points"][0]["trace"][1] == [0.05, 0.5000001, 1e-12]
    assert body["points"][0]["rate"] is None


def test_render_suite():
    cases = [
        SuiteCase("one", 1.0, "paper", 1.0 + 1e-12, 1e-8, note="exact"),
        SuiteCase("two", "converged", "trivial", "divergent"),
    ]
    report = SuiteReport("demo", cases, {"python": "3.11"}, duration=1.25, started_at="2024-01-01T00:00:00Z")
    body = json.loads(render_suite(report, "json"))
    assert body["kind"] == "suite"
    assert [c["pass"] for c in body["cases"]] == [True, False]
    assert "duration" not in body
    timed = json.loads(render_suite(report, "json", timings=True))
    assert timed["duration"] == 1.25
    rows = list(csv.reader(io.StringIO(render_suite(report, "csv"))))
    assert rows[1][:3] == ["one", "1.0", "paper"]
    assert rows[2][5] == "false"


def test_write_report(tmp_path):
    path = write_report("a,b\n", tmp_path / "nested" / "out.csv")
    assert path.read_text(encoding="utf-8") == "a,b\n"
    blocker = tmp_path / "file"
    blocker.write_text("", encoding="utf-8")
    with pytest.raises(ConfigError) as e:
        write_report("x", blocker / "out.csv")
    assert e.value.field == "output.path"
