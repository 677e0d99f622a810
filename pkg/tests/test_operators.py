"""Discrete averaging operators, Green identity, Poisson solves and audits."""

from __future__ import annotations

import math

import numpy as np
import pytest

from amv_lab.core import RegionSpec, make_atom_cloud
from amv_lab.estimator import RadiusSchedule
from amv_lab.exceptions import DomainError, InputError, MissingConstantsError, SingularSystemError
from amv_lab.fields import ExpressionField, field_from_spec
from amv_lab.operators import (
    build_amv_operator,
    build_Tr,
    lemma_weight,
    comparison_audit,
    export_triplets,
    green_check,
    lemma_inequality,
    maxprin_audit,
    minprin_audit,
    op_norm_probe,
    resolve_radius_ties,
    selfadjoint_defect,
    sgn_amv,
    sgn_pairing_oracle,
    solve_poisson,
    weak_pairing,
)
from amv_lab.spaces import SubmanifoldSpec, embedded_submanifold, weighted_lebesgue

R = 0.12


@pytest.fixture(scope="module")
def line_cloud(line):
    return make_atom_cloud(line, RegionSpec((0.0,), (1.0,)), 20)


@pytest.fixture(scope="module")
def circle_cloud():
    space = embedded_submanifold(SubmanifoldSpec("circle", {"radius": 1.0}))
    return make_atom_cloud(space, RegionSpec((-1.5, -1.5), (1.5, 1.5)), 32)


@pytest.fixture(scope="module")
def weighted_cloud():
    space = weighted_lebesgue(2, "1 + x^2 + y", box=((0.0, 1.0), (0.0, 1.0)))
    return make_atom_cloud(space, RegionSpec((0.0, 0.0), (1.0, 1.0), "random"), 12, seed=3)


def _interior(cloud, r):
    x = cloud.points[:, 0]
    return np.flatnonzero((x > r) & (x < 1.0 - r))


def test_constants_are_fixed_points(line_cloud):
    t_r = build_Tr(line_cloud, R)
    delta = build_amv_operator(line_cloud, R)
    ones = np.ones(len(line_cloud))
    np.testing.assert_array_equal(t_r.apply(ones), ones)
    np.testing.assert_array_equal(delta.apply(ones), 0.0)
    np.testing.assert_allclose(np.asarray(t_r.matrix.sum(axis=1)).ravel(), 1.0, rtol=1e-14)
    np.testing.assert_allclose(np.asarray(delta.matrix.sum(axis=1)).ravel(), 0.0, atol=1e-9)


def test_apply_matches_matrix(weighted_cloud, rng):
    delta = build_amv_operator(weighted_cloud, 0.3)
    u = rng.standard_normal(len(weighted_cloud))
    np.testing.assert_allclose(delta.apply(u), delta.matrix @ u, rtol=1e-9, atol=1e-9)
    with pytest.raises(InputError):
        delta.apply(u[:-1])


def test_linear_field_is_harmonic_inside(line_cloud):
    delta = build_amv_operator(line_cloud, R)
    lap = delta.apply(line_cloud.evaluate(ExpressionField("3*x - 1", ("x",))))
    np.testing.assert_allclose(lap[_interior(line_cloud, R)], 0.0, atol=1e-10)


def test_green_identity_on_weighted_cloud(weighted_cloud):
    u = weighted_cloud.evaluate(ExpressionField("x", ("x", "y")))
    v = weighted_cloud.evaluate(ExpressionField("x^2", ("x", "y")))
    report = green_check(weighted_cloud, u, v, r=0.3)
    assert report.passed
    assert report.lhs == pytest.approx(report.rhs, rel=1e-9, abs=1e-12)
    assert report.selfadjoint_defect > 0.0


def test_equal_masses_make_operator_selfadjoint(circle_cloud):
    delta = build_amv_operator(circle_cloud, 0.5)
    assert selfadjoint_defect(delta) == pytest.approx(0.0, abs=1e-9)
    u = circle_cloud.evaluate(ExpressionField("x", ("x", "y")))
    v = circle_cloud.evaluate(ExpressionField("x*y^2", ("x", "y")))
    report = green_check(delta, u, v)
    assert abs(report.rhs) < 1e-9
    assert report.passed


def test_green_rejects_non_finite(line_cloud):
    u = np.full(len(line_cloud), np.inf)
    with pytest.raises(InputError):
        green_check(line_cloud, u, u, r=R)


@pytest.mark.parametrize("p", [1, 2, math.inf])
def test_lemma_inequality(line_cloud, rng, p):
    op = build_Tr(line_cloud, R)
    check = lemma_inequality(op, rng.standard_normal(len(line_cloud)), p)
    assert check.holds


def test_lemma_weight_is_column_mass(line_cloud):
    op = build_Tr(line_cloud, R)
    w = lemma_weight(op)
    m = line_cloud.weights
    for j in (0, 7, 19):
        e = np.zeros(len(line_cloud))
        e[j] = 1.0
        assert np.sum(m * np.abs(op.apply(e))) == pytest.approx(w[j] * m[j], rel=1e-12)


def test_lemma_weight_uniform_circle(circle_cloud):
    np.testing.assert_allclose(lemma_weight(circle_cloud, 0.5), 1.0, rtol=1e-12)


def test_norm_probe_uniform_circle(circle_cloud):
    probe = op_norm_probe(circle_cloud, 2, r=0.5)
    assert probe.bound_source == "uniform"
    assert probe.t_bound == 1.0
    assert probe.t_norm == pytest.approx(1.0, abs=1e-9)
    assert probe.within()


@pytest.mark.parametrize("p", [1, 2, math.inf])
def test_norm_probe_box(line_cloud, p):
    probe = op_norm_probe(line_cloud, p, r=R)
    assert probe.bound_source == "ahlfors"
    assert probe.t_bound == pytest.approx(2.0)
    assert probe.within()
    assert probe.as_dict()["ratio"] == probe.ratio


def test_norm_probe_needs_constants(weighted_cloud):
    with pytest.raises(MissingConstantsError):
        op_norm_probe(weighted_cloud, 2, r=0.3)


def test_radius_ties(line):
    cloud = make_atom_cloud(line, RegionSpec((0.0,), (1.0,)), 4)
    assert resolve_radius_ties(cloud, 0.25) > 0.25
    assert resolve_radius_ties(cloud, 0.3) == 0.3


def test_operator_radius_mismatch(line_cloud):
    op = build_Tr(line_cloud, R)
    with pytest.raises(InputError):
        green_check(op, np.zeros(len(line_cloud)), np.zeros(len(line_cloud)), r=0.2)


def test_poisson_reproduces_linear_data(line_cloud):
    op = build_amv_operator(line_cloud, R)
    inner = _interior(line_cloud, R)
    boundary = np.setdiff1d(np.arange(len(line_cloud)), inner)
    exact = line_cloud.evaluate(ExpressionField("2*x + 1", ("x",)))
    u = solve_poisson(op, np.zeros(len(line_cloud)), boundary, exact[boundary])
    np.testing.assert_allclose(u, exact, atol=1e-10)


def test_poisson_scalar_boundary(line_cloud):
    op = build_amv_operator(line_cloud, R)
    u = solve_poisson(op, np.zeros(len(line_cloud)), [0, len(line_cloud) - 1], 3.0)
    np.testing.assert_allclose(u, 3.0, atol=1e-10)


def test_poisson_validation(line_cloud):
    op = build_amv_operator(line_cloud, R)
    zeros = np.zeros(len(line_cloud))
    with pytest.raises(DomainError):
        solve_poisson(op, zeros, [], 0.0)
    with pytest.raises(InputError):
        solve_poisson(op, zeros, [0, 0], 0.0)
    with pytest.raises(InputError):
        solve_poisson(op, zeros[:-1], [0], 0.0)


def test_poisson_singular_block(line_cloud):
    # below the atom spacing every ball holds only its centre
    op = build_amv_operator(line_cloud, 0.03)
    with pytest.raises(SingularSystemError):
        solve_poisson(op, np.ones(len(line_cloud)), [0], 0.0)


def test_maximum_principle(line_cloud):
    op = build_amv_operator(line_cloud, R)
    inner = _interior(line_cloud, R)
    convex = line_cloud.evaluate(ExpressionField("(x - 0.5)^2", ("x",)))
    assert maxprin_audit(op, convex, inner).classification == "pass"
    bump = line_cloud.evaluate(ExpressionField("x*(1 - x)", ("x",)))
    audit = maxprin_audit(op, bump, inner)
    assert audit.classification == "violated"
    assert audit.margin < 0
    assert minprin_audit(op, bump, inner).classification == "pass"


def test_maximum_principle_barrier(line_cloud):
    op = build_amv_operator(line_cloud, R)
    inner = _interior(line_cloud, R)
    flat = np.zeros(len(line_cloud))
    barrier = line_cloud.evaluate(ExpressionField("x^2", ("x",)))
    audit = maxprin_audit(op, flat, inner, barrier=barrier)
    assert audit.classification == "pass"
    assert audit.perturbation == 1e-6
    with pytest.raises(DomainError):
        maxprin_audit(op, flat, inner, barrier=-barrier)


def test_comparison(line_cloud):
    op = build_amv_operator(line_cloud, R)
    inner = _interior(line_cloud, R)
    v = line_cloud.evaluate(ExpressionField("x^2", ("x",)))
    audit = comparison_audit(op, v + 1.0, v, inner)
    assert audit.hypotheses_hold
    assert audit.holds
    assert audit.worst_gap == pytest.approx(-1.0)


def test_sgn_closed_form():
    r = 0.2
    np.testing.assert_allclose(sgn_amv([-0.1, 0.1, 0.3, 0.0], r), [0.1 / r**3, -0.1 / r**3, 0.0, 0.0])


def test_weak_pairing_matches_closed_form(line):
    u = field_from_spec("sgn", ("x",))
    phi = ExpressionField("(1 - x^2)^2 * (1 + x)", ("x",))
    schedule = RadiusSchedule(0.2, 0.7, 5)
    result = weak_pairing(line, u, phi, RegionSpec((-1.0,), (1.0,)), schedule)
    for point in result.trace:
        assert point.value == pytest.approx(sgn_pairing_oracle(lambda s: phi.value((s,)), point.r), rel=1e-8)
    assert result.quantity == "weak-pairing"


def test_export_triplets(line_cloud, tmp_path):
    op = build_amv_operator(line_cloud, R)
    path = export_triplets(op, tmp_path / "delta.txt")
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split()
    assert header[:4] == ["#", "20", "20", str(op.matrix.nnz)]
    assert header[-1] == "Delta_r"
    assert len(lines) == op.matrix.nnz + 1
    row, col, value = lines[1].split()
    assert float(value) == op.matrix[int(row), int(col)]
