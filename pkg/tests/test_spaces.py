"""Space constructors and descriptor round trips."""

from __future__ import annotations

import math

import pytest

from amv_lab.core import EffortBudget, ball_integrate, ball_mass
from amv_lab.exceptions import DomainError, InputError
from amv_lab.fields import ExpressionField
from amv_lab.spaces import (
    SubmanifoldSpec,
    WeightSpec,
    cc_distance,
    embedded_submanifold,
    euclidean_lebesgue,
    example_complex,
    heisenberg_cc,
    lebesgue_plus_dirac,
    ray_star,
    space_from_descriptor,
    stratified_complex,
    weighted_lebesgue,
)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: euclidean_lebesgue(3),
        lambda: euclidean_lebesgue(2, box=((0.0, 1.0), (0.0, 2.0))),
        lambda: weighted_lebesgue(2, WeightSpec("bose_weight", zero_set_hint="x + y = 0")),
        lambda: lebesgue_plus_dirac(1, mass=0.5, backend="monte-carlo", seed=4),
        lambda: heisenberg_cc(seed=9),
        lambda: example_complex(2),
        lambda: embedded_submanifold(SubmanifoldSpec("circle", {"radius": 2.0})),
        lambda: ray_star((0.0, 120.0, 240.0)),
    ],
    ids=["euclidean", "box", "weighted", "dirac", "heisenberg", "complex", "circle", "rays"],
)
def test_descriptor_round_trip(factory):
    space = factory()
    rebuilt = space_from_descriptor(space.descriptor)
    assert rebuilt == space
    assert rebuilt.ambient_dim == space.ambient_dim
    assert rebuilt.norm_constants == space.norm_constants


def test_unknown_kind():
    with pytest.raises(InputError):
        space_from_descriptor({"kind": "hyperbolic"})


def test_negative_density_rejected():
    with pytest.raises(DomainError):
        weighted_lebesgue(1, "x")


def test_density_checked_on_box_only():
    space = weighted_lebesgue(1, "x", box=((0.0, 1.0),))
    assert ball_mass(space, (0.5,), 0.25).mass == pytest.approx(0.25)


def test_weight_regularity():
    with pytest.raises(InputError):
        WeightSpec("1", regularity="smooth")


def test_dirac_mass_in_ball():
    space = lebesgue_plus_dirac(1, mass=0.5)
    assert ball_mass(space, (0.0,), 0.1).mass == pytest.approx(0.7)


def test_euclidean_constants():
    assert euclidean_lebesgue(2).norm_constants.uniform
    box = euclidean_lebesgue(2, box=((0.0, 1.0), (0.0, 1.0)))
    assert not box.norm_constants.uniform
    assert box.norm_constants.ahlfors == (math.pi / 4.0, math.pi)


def test_circle_submanifold():
    spec = SubmanifoldSpec("circle", {"radius": 1.0})
    assert spec.second_fundamental == 1.0
    assert spec.extrinsic_mass_coefficient == pytest.approx(1.0 / 24.0)
    space = embedded_submanifold(spec)
    r = 0.1
    exact = ball_mass(space, (1.0, 0.0), r).mass
    assert exact == pytest.approx(4.0 * math.asin(r / 2.0))
    assert spec.extrinsic_mass(r) == pytest.approx(exact, rel=1e-5)
    assert spec.intrinsic_mass(r) == pytest.approx(2.0 * r)


def test_submanifold_validation():
    with pytest.raises(InputError):
        SubmanifoldSpec("torus")
    with pytest.raises(InputError):
        SubmanifoldSpec("circle", intrinsic_dim=2)
    assert SubmanifoldSpec("graph", {"function": "x^2", "interval": [0, 1]}).extrinsic_mass_coefficient is None


def test_stratified_validation():
    with pytest.raises(DomainError):
        stratified_complex([])


def test_example_complex_variants():
    with pytest.raises(InputError):
        example_complex(4)
    space = example_complex(3)
    assert space.strata[0].local_dim(space.point((0.0, 0.0))) == 3.0


def test_ray_star_support():
    star = ray_star((0.0, 90.0))
    assert star.support_test(star.point((0.0, 0.5)))
    assert not star.support_test(star.point((0.5, 0.5)))
    assert star.norm_constants.ahlfors == (1.0, 2.0)


def test_heisenberg_space():
    space = heisenberg_cc()
    assert space.coordinate_names == ("x", "y", "t")
    assert space.norm_constants.uniform
    assert cc_distance((0.0, 0.0, 0.0), (1.0, 0.0, 0.0)) == pytest.approx(1.0)


CIRCLE = SubmanifoldSpec("circle", {"radius": 1.0})


def ray_star_space(backend):
    return stratified_complex(ray_star([0.0, 120.0, 240.0]).strata, backend=backend, seed=3)


@pytest.mark.parametrize(
    ("factory", "x", "text"),
    [
        (lambda backend: euclidean_lebesgue(1, backend=backend, seed=3), (0.2,), "x^3 - x"),
        (lambda backend: euclidean_lebesgue(2, backend=backend, seed=3), (0.2, -0.1), "x^2 + x*y"),
        (lambda backend: euclidean_lebesgue(3, backend=backend, seed=3), (0.1, 0.0, -0.2), "x*z + y^2"),
        (lambda backend: weighted_lebesgue(2, "bose_weight", backend=backend, seed=3), (1.0, 0.5), "x^3 + y"),
        (lambda backend: lebesgue_plus_dirac(2, backend=backend, seed=3), (0.0, 0.0), "x^2 + y + 1"),
        (
            lambda backend: stratified_complex(example_complex(1).strata, backend=backend, seed=3),
            (0.0, 0.0),
            "x^2 + y^2 + x",
        ),
        (lambda backend: embedded_submanifold(CIRCLE, backend=backend, seed=3), (1.0, 0.0), "x + y^2"),
        (lambda backend: ray_star_space(backend), (0.0, 0.0), "x + 2*y^2"),
    ],
    ids=["euclid-1", "euclid-2", "euclid-3", "weighted", "dirac", "complex", "circle", "rays"],
)
def test_backends_agree(factory, x, text):
    budget = EffortBudget(max_evals=200_000, target_error=1e-15)
    space = factory("quadrature")
    u = ExpressionField(text, ("x", "y", "z")[: space.ambient_dim])
    exact = ball_integrate(space, x, 0.3, u)
    sampled = ball_integrate(factory("monte-carlo"), x, 0.3, u, budget)
    assert sampled.method == "monte-carlo"
    assert abs(sampled.average - exact.average) <= 1.5 * sampled.average_error
    assert abs(sampled.mass - exact.mass) <= 1.5 * sampled.mass_error + 1e-12
