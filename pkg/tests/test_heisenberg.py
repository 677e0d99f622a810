"""Heisenberg group law, CC distance, ball sampling and the constants file."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from amv_lab.core import EffortBudget, ball_integrate, ball_mass
from amv_lab.exceptions import ConstantsFileMissingError, InputError
from amv_lab.estimator import amv_at_radius
from amv_lab.fields import ExpressionField
from amv_lab.heisenberg import (
    COORDINATES,
    CCMetric,
    cc_distance,
    cc_norm,
    constants_path,
    dilate,
    discrete_control_distance,
    group_inv,
    group_mul,
    heisenberg_moment_reference,
    kohn_laplacian,
    load_constants,
)
from amv_lab.spaces import heisenberg_cc


def test_group_law():
    p = np.array([1.0, 2.0, 3.0])
    q = np.array([-0.5, 0.25, 1.0])
    np.testing.assert_allclose(group_mul(p, q), [0.5, 2.25, 3.0 + 1.0 + 2.0 * (2.0 * -0.5 - 1.0 * 0.25)])
    np.testing.assert_allclose(group_mul(p, group_inv(p)), 0.0)


def test_vertical_distance():
    assert cc_norm(np.array([0.0, 0.0, 2.0]))[0] == pytest.approx(math.sqrt(2.0 * math.pi))


def test_distance_is_homogeneous():
    q = np.array([0.3, -0.4, 0.2])
    assert cc_norm(dilate(q, 2.5))[0] == pytest.approx(2.5 * cc_norm(q)[0], rel=1e-9)


def test_distance_is_left_invariant():
    a = (0.1, 0.2, -0.3)
    b = (-0.4, 0.5, 0.6)
    g = np.array([2.0, -1.0, 0.5])
    left = cc_distance(group_mul(g, np.array(a)), group_mul(g, np.array(b)))
    assert left == pytest.approx(cc_distance(a, b), rel=1e-9)
    assert cc_distance(a, b) == pytest.approx(cc_distance(b, a), rel=1e-9)


def test_non_finite_point():
    with pytest.raises(InputError):
        cc_norm(np.array([math.nan, 0.0, 0.0]))


def test_polygon_oracle_agrees():
    q = (0.5, 0.2, 0.3)
    assert discrete_control_distance(q, segments=32) == pytest.approx(cc_norm(np.array(q))[0], rel=1e-3)


def test_neighbours_match_brute_force(rng):
    points = rng.uniform(-0.5, 0.5, (40, 3))
    rows, cols = CCMetric().neighbors(points, 0.4)
    found = set(zip(rows.tolist(), cols.tolist()))
    expected = {
        (i, j)
        for i in range(len(points))
        for j, d in enumerate(CCMetric().distances(points[i], points))
        if d < 0.4
    }
    assert found == expected


def test_kohn_laplacian():
    assert kohn_laplacian(ExpressionField("x^2 + y^2", COORDINATES)) == 4
    assert kohn_laplacian(ExpressionField("t", COORDINATES)) == 0
    with pytest.raises(InputError):
        kohn_laplacian(ExpressionField("x^2", ("x", "y", "z")))


def test_ball_mass_scales_like_r4():
    space = heisenberg_cc(seed=2)
    budget = EffortBudget(max_evals=200_000)
    volume = heisenberg_moment_reference()["volume"]
    est = ball_mass(space, (1.0, -1.0, 3.0), 0.5, budget)
    assert est.method == "monte-carlo"
    assert abs(est.mass - volume * 0.5**4) <= 2.0 * est.mass_error


def test_ball_average_of_constant():
    space = heisenberg_cc(seed=2)
    est = ball_integrate(space, (0.2, 0.1, 0.0), 0.3, ExpressionField("4", COORDINATES), EffortBudget(max_evals=10_000))
    assert est.average == 4.0


def test_constants_match_reference(constants_file):
    constants = load_constants(constants_file)
    reference = heisenberg_moment_reference()
    assert constants["samples"] == 200_000
    assert abs(constants["c_estimate"] - reference["c"]) <= 5.0 * constants["std_error"]


def test_constants_path_from_env(monkeypatch, tmp_path):
    target = tmp_path / "c.json"
    monkeypatch.setenv("AMV_CONSTANTS_PATH", str(target))
    assert constants_path() == target
    assert constants_path("other.json").name == "other.json"


def test_missing_constants(tmp_path):
    with pytest.raises(ConstantsFileMissingError):
        load_constants(tmp_path / "absent.json")
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"c_estimate": 0.1}), encoding="utf-8")
    with pytest.raises(ConstantsFileMissingError):
        load_constants(partial)


def test_triangle_inequality(rng):
    p, q, s = (rng.uniform(-1.0, 1.0, (10_000, 3)) for _ in range(3))

    def dist(a, b):
        return cc_norm(group_mul(group_inv(a), b))

    assert np.all(dist(p, s) <= dist(p, q) + dist(q, s) + 1e-9)


def test_planar_distance_is_euclidean(rng):
    planar = np.column_stack([rng.uniform(-2.0, 2.0, (100, 2)), np.zeros(100)])
    got = [cc_distance((0.0, 0.0, 0.0), q) for q in planar]
    np.testing.assert_allclose(got, np.hypot(planar[:, 0], planar[:, 1]), rtol=1e-12)


def test_vertical_distance_against_polygon_oracle():
    assert cc_distance((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)) == pytest.approx(math.sqrt(math.pi), rel=1e-12)
    assert discrete_control_distance((0.0, 0.0, 1.0)) == pytest.approx(math.sqrt(math.pi), abs=1e-5)


def test_amv_is_left_invariant():
    space = heisenberg_cc(seed=4)
    budget = EffortBudget(max_evals=50_000, target_error=1e-15)
    u = ExpressionField("x*t + y^2", COORDINATES)
    g = np.array([0.4, -0.7, 0.2])
    p = np.array([-0.1, 0.3, 0.5])
    moved = u.pullback(lambda pts: group_mul(g[None, :], pts))
    value, _ = amv_at_radius(space, u, group_mul(g, p), 0.5, budget)
    pulled, _ = amv_at_radius(space, moved, p, 0.5, budget)
    assert pulled == pytest.approx(value, rel=1e-9, abs=1e-12)
