"""Strata, Ahlfors audits and the stratum integrator."""

from __future__ import annotations

import math

import numpy as np
import pytest

from amv_lab.core import EffortBudget, ball_integrate, ball_mass
from amv_lab.exceptions import DomainError, InputError, MissingConstantsError
from amv_lab.fields import ExpressionField
from amv_lab.spaces import euclidean_lebesgue, example_complex, stratum_weights
from amv_lab.strata import (
    ArcStratum,
    GraphCurveStratum,
    LebesgueStratum,
    PointStratum,
    SegmentStratum,
    check_ahlfors,
    stratum_from_descriptor,
)


def test_segment_masses_and_directions():
    seg = SegmentStratum((0.0, 0.0), (1.0, 0.0))
    assert seg.geometric_mass(np.array([0.0, 0.0]), 0.3) == pytest.approx(0.3)
    assert seg.geometric_mass(np.array([0.5, 0.0]), 0.3) == pytest.approx(0.6)
    np.testing.assert_allclose(seg.directions(np.array([0.0, 0.0]))[0], [1.0, 0.0])
    np.testing.assert_allclose(seg.directions(np.array([1.0, 0.0]))[0], [-1.0, 0.0])
    assert seg.directions(np.array([0.5, 0.0])) == []


def test_degenerate_segment():
    with pytest.raises(DomainError):
        SegmentStratum((1.0, 1.0), (1.0, 1.0))


def test_circle_stratum():
    arc = ArcStratum((0.0, 0.0), 2.0)
    assert arc.contains(np.array([0.0, 2.0]))
    assert not arc.contains(np.array([0.0, 1.0]))
    assert arc.geometric_mass(np.array([2.0, 0.0]), 0.2) == pytest.approx(8.0 * math.asin(0.05))
    assert len(arc.directions(np.array([2.0, 0.0]))) == 2


def test_flat_graph_is_a_segment():
    graph = GraphCurveStratum("0", (-1.0, 1.0))
    _, weights = graph.ball_rule(np.array([0.0, 0.0]), 0.2, 8)
    assert np.sum(weights) == pytest.approx(0.4)
    np.testing.assert_allclose(graph.directions(np.array([-1.0, 0.0]))[0], [1.0, 0.0])


def test_parabola_arclength():
    graph = GraphCurveStratum("x^2", (0.0, 1.0))
    _, weights = graph.ball_rule(np.array([0.5, 0.25]), 2.0, 16)
    # arclength of y = x^2 on [0, 1]
    exact = 0.5 * math.sqrt(5.0) + 0.25 * math.asinh(2.0)
    assert np.sum(weights) == pytest.approx(exact, rel=1e-10)


def test_weighted_segment_density():
    seg = SegmentStratum((0.0, 0.0), (1.0, 0.0), density="x")
    _, weights = seg.ball_rule(np.array([0.0, 0.0]), 0.5, 4)
    assert np.sum(weights) == pytest.approx(0.125)
    assert seg.analytic_mass(np.array([0.0, 0.0]), 0.5) is None


def test_point_stratum():
    atom = PointStratum((0.0, 0.0), mass=2.0)
    assert atom.geometric_mass(np.array([0.05, 0.0]), 0.1) == 2.0
    assert atom.geometric_mass(np.array([0.1, 0.0]), 0.1) == 0.0
    with pytest.raises(InputError):
        PointStratum((0.0,), mass=0.0)


def test_clipped_lebesgue_half_disk():
    square = LebesgueStratum(2, box=((-1.0, 0.0), (-0.5, 0.5)))
    assert square.geometric_mass(np.array([0.0, 0.0]), 0.2) == pytest.approx(0.02 * math.pi)
    with pytest.raises(InputError):
        LebesgueStratum(2, box=((0.0, 0.0), (0.0, 1.0)))


def test_vertex_dimension_override():
    seg = SegmentStratum((0.0, 0.0), (1.0, 0.0), density="x", vertex_dims={(0.0, 0.0): 2.0})
    assert seg.local_dim(np.array([0.0, 0.0])) == 2.0
    assert seg.local_dim(np.array([0.5, 0.0])) == 1.0


def test_descriptor_rebuilds_stratum():
    seg = SegmentStratum(
        (0.0, 0.0),
        (1.0, 0.0),
        density="x^2",
        ahlfors_constants=(0.3, 1.0),
        vertex_dims={(0.0, 0.0): 3.0},
    )
    copy = stratum_from_descriptor(seg.descriptor())
    assert copy.descriptor() == seg.descriptor()
    assert copy.ahlfors_constants == (0.3, 1.0)
    with pytest.raises(InputError):
        stratum_from_descriptor({"kind": "torus"})


def test_ahlfors_audit():
    seg = SegmentStratum((0.0, 0.0), (1.0, 0.0), ahlfors_constants=(1.0, 2.0))
    audit = check_ahlfors(seg, [(0.0, 0.0), (0.5, 0.0)], [0.1, 0.05, 0.01])
    assert audit.ok
    assert audit.min_ratio == pytest.approx(1.0)
    assert audit.max_ratio == pytest.approx(2.0)
    tight = SegmentStratum((0.0, 0.0), (1.0, 0.0), ahlfors_constants=(1.5, 2.0))
    audit = check_ahlfors(tight, [(0.0, 0.0)], [0.1])
    assert not audit.ok
    assert audit.violations[0][1] == 0.1


def test_ahlfors_audit_needs_constants():
    with pytest.raises(MissingConstantsError):
        check_ahlfors(SegmentStratum((0.0, 0.0), (1.0, 0.0)), [(0.0, 0.0)], [0.1])


def test_monte_carlo_backend():
    space = euclidean_lebesgue(2, backend="monte-carlo", seed=3)
    budget = EffortBudget(max_evals=200_000)
    est = ball_integrate(space, (0.0, 0.0), 0.5, ExpressionField("x^2 + y^2", ("x", "y")), budget)
    assert est.method == "monte-carlo"
    assert est.samples_used == 200_000
    assert abs(est.average - 0.125) <= 2.0 * est.average_error
    assert ball_mass(space, (0.0, 0.0), 0.5, budget).method == "monte-carlo"


def test_monte_carlo_is_reproducible():
    budget = EffortBudget(max_evals=50_000)
    u = ExpressionField("x*y", ("x", "y"))
    a = ball_integrate(euclidean_lebesgue(2, backend="monte-carlo", seed=5), (0.1, 0.2), 0.3, u, budget)
    b = ball_integrate(euclidean_lebesgue(2, backend="monte-carlo", seed=5), (0.1, 0.2), 0.3, u, budget)
    assert a.integral == b.integral


def test_stratum_weights_at_complex_vertex():
    space = example_complex(1)
    rows = stratum_weights(space, (0.0, 0.0), [0.1, 0.01])
    np.testing.assert_allclose(rows.sum(axis=1), 1.0)
    # segment mass r against half-disk mass pi r^2 / 2
    assert rows[-1, 0] == pytest.approx(1.0 / (1.0 + 0.005 * math.pi))


@pytest.mark.parametrize("r", [0.1, 0.01, 0.001])
def test_complex_vertex_ball_mass(r):
    # the segment contributes r, the square a half disk
    mass = ball_mass(example_complex(1), (0.0, 0.0), r).mass
    assert mass == pytest.approx(r + math.pi * r * r / 2.0, rel=1e-10)


def test_complex_vertex_ball_mass_value():
    assert ball_mass(example_complex(1), (0.0, 0.0), 0.1).mass == pytest.approx(0.1157080, abs=1e-7)
