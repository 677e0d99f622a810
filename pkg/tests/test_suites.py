"""Verification suites."""

from __future__ import annotations

import pytest

from amv_lab.exceptions import ConfigError, InputError
from amv_lab.suites import SUITES, SuiteCase, SuiteSettings, run_suite


def test_case_provenance():
    with pytest.raises(InputError):
        SuiteCase("x", 1.0, "folklore", 1.0)
    with pytest.raises(InputError):
        SuiteCase("x", 1.0, "paper", 1.0, tolerance=-1.0)


@pytest.mark.parametrize(
    ("expected", "measured", "tolerance", "passed"),
    [
        (1.0, 1.0 + 1e-9, 1e-8, True),
        (1.0, 1.1, 1e-8, False),
        (1.0, None, 1.0, False),
        (1.0, float("nan"), 1.0, False),
        ("divergent", "divergent", 0.0, True),
        ("divergent", "inconclusive", 0.0, False),
    ],
)
def test_case_passed(expected, measured, tolerance, passed):
    assert SuiteCase("x", expected, "derived", measured, tolerance).passed is passed


def test_unknown_suite():
    with pytest.raises(ConfigError) as e:
        run_suite("hyperbolic")
    assert e.value.field == "suite"


def test_settings_samples():
    assert SuiteSettings().heisenberg_samples == 200_000
    assert SuiteSettings(full=True).heisenberg_samples == 1_000_000
    assert SuiteSettings(samples=10).heisenberg_samples == 10


@pytest.mark.parametrize("name", ["euclid", "dirac", "stratified", "submanifold"])
def test_quick_suites_pass(name):
    report = run_suite(name, SuiteSettings(seed=0, workers=2))
    failed = [c.as_dict() for c in report.cases if not c.passed]
    assert not failed
    assert report.passed
    assert report.suite_name == name
    assert "duration" not in report.as_dict()


def test_suite_is_reproducible():
    a = run_suite("euclid", SuiteSettings(seed=5, workers=1))
    b = run_suite("euclid", SuiteSettings(seed=5, workers=3))
    assert [c.as_dict() for c in a.cases] == [c.as_dict() for c in b.cases]


@pytest.mark.slow()
@pytest.mark.parametrize("name", ["bose", "operator"])
def test_heavier_suites_pass(name):
    report = run_suite(name, SuiteSettings(seed=0))
    assert [c.case_id for c in report.cases if not c.passed] == []


@pytest.mark.slow()
def test_heisenberg_suite(constants_file):
    report = run_suite("heisenberg", SuiteSettings(seed=0, constants_path=str(constants_file)))
    assert [c.case_id for c in report.cases if not c.passed] == []
    assert report.environment["constants_path"] == str(constants_file)


def test_registry():
    assert sorted(SUITES) == sorted(
        ["euclid", "heisenberg", "bose", "dirac", "stratified", "submanifold", "operator"],
    )


def test_heisenberg_without_constants_reports_failure(tmp_path):
    report = run_suite("heisenberg", SuiteSettings(constants_path=str(tmp_path / "absent.json")))
    assert not report.passed
    assert [c.case_id for c in report.cases] == ["constants"]
    assert report.cases[0].measured == "error"
    assert report.cases[0].note.startswith("ConstantsFileMissingError")


def test_environment_records_schedules_and_budget():
    report = run_suite("dirac", SuiteSettings(seed=0, workers=2))
    environment = report.environment
    assert environment["schedules"]["origin"] == {"r0": 0.05, "ratio": 0.7, "count": 12}
    assert environment["schedules"]["off-origin"]["r0"] == 0.2
    assert environment["budget"] == {"max_evals": 2_000_000, "target_error": 1e-13, "mc_k": 3.0}
    assert environment["convergence"]["stability"] == 1e-6
    assert environment["seed"] == 0
