"""CSV and JSON report writers.

Reports are regenerated from scratch on every run. Floats are written with
``repr`` and JSON keys are sorted, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import typing as t
from pathlib import Path

import numpy as np

from amv_lab.exceptions import ConfigError

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    from amv_lab.core import AtomCloud
    from amv_lab.estimator import AmvResult
    from amv_lab.operators import GreenReport
    from amv_lab.suites import SuiteReport

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
EVAL_COLUMNS = ("point_id", "r", "value", "abs_error", "verdict")
SUITE_COLUMNS = ("case_id", "expected", "expected_provenance", "measured", "tolerance", "pass", "note")


def clean(value: t.Any) -> t.Any:
    """JSON-ready copy: numpy types unwrapped, tuples listed, NaN and infinities as None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def render_json(payload: t.Mapping[str, t.Any]) -> str:
    """Schema-versioned, key-sorted JSON text."""
    body = {"schema_version": REPORT_SCHEMA_VERSION, **payload}
    return json.dumps(clean(body), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _cell(value: t.Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return repr(v) if math.isfinite(v) else ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def render_csv(columns: t.Sequence[str], rows: t.Iterable[t.Sequence[t.Any]]) -> str:
    """CSV text with a header row."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def eval_rows(results: t.Sequence[AmvResult]) -> list[tuple[t.Any, ...]]:
    """One row per (point, radius) and a summary row per point with ``r = 0``."""
    rows: list[tuple[t.Any, ...]] = []
    for point_id, result in enumerate(results):
        rows.extend((point_id, p.r, p.value, p.abs_error, "") for p in result.trace)
        value = result.value if result.converged else None
        error = result.value_error if result.converged else None
        rows.append((point_id, 0.0, value, error, result.verdict))
    return rows


def eval_payload(
    points: t.Sequence[t.Sequence[float]],
    results: t.Sequence[AmvResult],
    context: t.Mapping[str, t.Any],
) -> dict[str, t.Any]:
    """JSON body of an ``eval`` run."""
    return {
        "kind": "eval",
        **context,
        "points": [
            {"point_id": i, "point": list(p), **result.as_dict()}
            for i, (p, result) in enumerate(zip(points, results))
        ],
    }


def render_eval(
    points: t.Sequence[t.Sequence[float]],
    results: t.Sequence[AmvResult],
    context: t.Mapping[str, t.Any],
    fmt: str,
) -> str:
    """Text of an ``eval`` report."""
    if fmt == "json":
        return render_json(eval_payload(points, results, context))
    return render_csv(EVAL_COLUMNS, eval_rows(results))


def render_suite(report: SuiteReport, fmt: str, *, timings: bool = False) -> str:
    """Text of a suite report."""
    if fmt == "json":
        return render_json({"kind": "suite", **report.as_dict(timings=timings)})
    rows = [
        (c.case_id, c.expected, c.provenance, c.measured, c.tolerance, c.passed, c.note)
        for c in report.cases
    ]
    return render_csv(SUITE_COLUMNS, rows)


def render_green(report: GreenReport, context: t.Mapping[str, t.Any], fmt: str) -> str:
    """Text of a Green-identity report."""
    body = report.as_dict()
    if fmt == "json":
        return render_json({"kind": "green", **context, **body})
    keys = sorted(body)
    return render_csv(keys, [[body[k] for k in keys]])


def render_solution(cloud: AtomCloud, u: NDArray[np.float64], context: t.Mapping[str, t.Any], fmt: str) -> str:
    """Text of a Poisson solution: atom coordinates, weight and value."""
    names = [f"x{i}" for i in range(cloud.points.shape[1])]
    if fmt == "json":
        atoms = [
            {"atom_id": i, "point": p, "weight": w, "u": v}
            for i, (p, w, v) in enumerate(zip(cloud.points.tolist(), cloud.weights.tolist(), np.asarray(u).tolist()))
        ]
        return render_json({"kind": "poisson", **context, "atoms": atoms})
    rows = [
        (i, *p, w, v)
        for i, (p, w, v) in enumerate(zip(cloud.points.tolist(), cloud.weights.tolist(), np.asarray(u).tolist()))
    ]
    return render_csv(("atom_id", *names, "weight", "u"), rows)


def write_report(text: str, path: str | Path) -> Path:
    """Write (replace) a report file.

    Raises:
        ConfigError: the path cannot be written.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except OSError as e:
        msg = f"Cannot write report to {target}: {e.strerror}"
        raise ConfigError(msg, field="output.path") from e
    logger.info("Wrote report %s (%d bytes)", target, len(text.encode("utf-8")))
    return target
