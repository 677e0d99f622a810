"""Field expressions, named fields and derivative oracles."""

from __future__ import annotations

import numpy as np
import pytest

from amv_lab.exceptions import FieldExpressionError, InputError
from amv_lab.fields import (
    NAMED_FIELDS,
    ExpressionField,
    ScalarField,
    field_from_spec,
    linear_combination,
)


def test_expression_values_and_derivatives():
    u = ExpressionField("x^2 - 3*x*y + y^2", ("x", "y"))
    assert u.value((1.0, 2.0)) == pytest.approx(1.0 - 6.0 + 4.0)
    np.testing.assert_allclose(u.gradient((1.0, 2.0)), [2.0 - 6.0, -3.0 + 4.0])
    np.testing.assert_allclose(u.hessian((0.3, -0.1)), [[2.0, -3.0], [-3.0, 2.0]])
    assert u.has_derivatives


def test_vectorised_evaluation():
    u = ExpressionField("x*y + 1", ("x", "y"))
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 3.0]])
    np.testing.assert_allclose(u(pts), [1.0, 3.0, -2.0])


def test_constant_expression_broadcasts():
    u = ExpressionField("2", ("x", "y"))
    np.testing.assert_allclose(u(np.zeros((4, 2))), 2.0)


def test_laplacian_field():
    u = ExpressionField("x^3 + x*y^2", ("x", "y"))
    lap = u.laplacian()
    assert lap.value((1.0, 0.5)) == pytest.approx(6.0 + 2.0)
    quartic = ExpressionField("x^4 + y^4", ("x", "y")).laplacian()
    assert quartic.value((1.0, 2.0)) == pytest.approx(12.0 + 48.0)
    assert ExpressionField("x^2 - y^2", ("x", "y")).laplacian().value((3.0, 1.0)) == 0.0


def test_pullback_composes():
    u = ExpressionField("x*y", ("x", "y"))
    shifted = u.pullback(lambda pts: pts + np.array([1.0, -2.0]), name="shifted")
    assert shifted.value((0.5, 0.5)) == pytest.approx(1.5 * -1.5)
    assert shifted.name == "shifted"
    assert not shifted.has_derivatives


def test_directional_derivative():
    u = ExpressionField("x + 2*y", ("x", "y"))
    assert u.directional_derivative((0.0, 0.0), (0.0, 1.0)) == pytest.approx(2.0)


def test_named_fields_resolve():
    for name, text in NAMED_FIELDS.items():
        f = field_from_spec(name, ("x", "y"))
        assert f.text == text


def test_sgn_step_values():
    step = field_from_spec("sgn_step", ("x",))
    np.testing.assert_allclose(step(np.array([[-0.5], [0.0], [0.5], [1.0], [1.5]])), [0.0, 1.0, 2.0, 1.0, 0.0])
    assert step.breakpoints == (0.0, 1.0)


def test_abs_breakpoint():
    assert ExpressionField("abs(x - 0.25)", ("x",)).breakpoints == (0.25,)


@pytest.mark.parametrize("text", ["x + q", "import os", "x.__class__", "y + 1"])
def test_rejects_outside_grammar(text):
    with pytest.raises(FieldExpressionError):
        ExpressionField(text, ("x",))


def test_dimension_mismatch():
    u = ExpressionField("x", ("x", "y"))
    with pytest.raises(InputError):
        u(np.zeros((2, 3)))


def test_plain_field_has_no_oracles():
    f = ScalarField(lambda p: p[:, 0], 1, name="id")
    assert not f.has_derivatives
    with pytest.raises(InputError):
        f.gradient((0.0,))


def test_linear_combination_keeps_breakpoints():
    u = field_from_spec("sgn", ("x",))
    v = ExpressionField("x^2", ("x",))
    w = linear_combination(2.0, u, -1.0, v)
    assert w.value((0.5,)) == pytest.approx(2.0 - 0.25)
    assert 0.0 in w.breakpoints


def test_constant_and_coordinate_fields():
    c = ScalarField.constant(3.0, 2)
    np.testing.assert_allclose(c.gradient((1.0, 1.0)), 0.0)
    y1 = ScalarField.coordinate(1, 2, origin=(0.0, 0.5))
    assert y1.value((4.0, 2.0)) == pytest.approx(1.5)
