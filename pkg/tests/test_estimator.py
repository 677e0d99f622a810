"""Radius traces, their verdicts and the derived limits."""

from __future__ import annotations

import math

import numpy as np
import pytest

from amv_lab.estimator import (
    CONVERGED,
    DIVERGENT,
    INCONCLUSIVE,
    ConvergenceSettings,
    RadiusSchedule,
    TracePoint,
    amv_at_radius,
    amv_limit,
    amv_lower,
    amv_upper,
    classify_convergence,
    degenerate_operator_limit,
    dirac_auxiliary_limit,
    fit_trace,
    predicted_stratified_limit,
    segment_remainder_limit,
    weighted_moments,
)
from amv_lab.exceptions import EvaluationError, InputError, TraceTooShortError
from amv_lab.fields import ExpressionField, ScalarField, linear_combination
from amv_lab.spaces import example_complex, lebesgue_plus_dirac

SCHEDULE = RadiusSchedule(0.2, 0.7, 10)


def _trace(value, err=1e-14):
    return [TracePoint(r, value(r), err) for r in SCHEDULE.radii]


def test_schedule_radii():
    schedule = RadiusSchedule(0.5, 0.5, 4)
    assert schedule.radii == [0.5, 0.25, 0.125, 0.0625]
    assert RadiusSchedule.default(0.4).r0 == pytest.approx(0.2)


@pytest.mark.parametrize(
    "kwargs",
    [{"r0": 0.0}, {"r0": 1.0, "ratio": 1.0}, {"r0": 1.0, "count": 3}],
)
def test_schedule_validation(kwargs):
    with pytest.raises(InputError):
        RadiusSchedule(**kwargs)


def test_settings_validation():
    with pytest.raises(InputError):
        ConvergenceSettings(r2_min=1.5)


def test_short_trace():
    with pytest.raises(TraceTooShortError):
        fit_trace([(0.1, 1.0, 0.0)] * 3)


def test_polynomial_trace_extrapolates():
    fit = fit_trace(_trace(lambda r: 2.0 + 3.0 * r + 0.5 * r * r))
    assert fit.verdict == CONVERGED
    assert fit.value == pytest.approx(2.0, abs=1e-9)
    assert fit.degree == 2


def test_power_law_trace_diverges():
    fit = fit_trace(_trace(lambda r: 1.0 / r))
    assert fit.verdict == DIVERGENT
    assert fit.rate == pytest.approx(-1.0)
    assert fit.r_squared == pytest.approx(1.0)


def test_zero_trace():
    fit = fit_trace(_trace(lambda r: 0.0))
    assert fit.verdict == CONVERGED
    assert fit.value == 0.0


def test_non_finite_trace_is_inconclusive():
    trace = _trace(lambda r: 1.0)
    trace[3] = TracePoint(trace[3].r, math.nan, 0.0)
    assert classify_convergence(trace) == INCONCLUSIVE


def test_oscillating_trace_is_inconclusive():
    assert classify_convergence(_trace(lambda r: math.sin(1.0 / r))) == INCONCLUSIVE


def test_rational_trace_converges():
    fit = fit_trace(_trace(lambda r: 1.0 / (1.0 + 2.0 * r)))
    assert fit.verdict == CONVERGED
    assert fit.value == pytest.approx(1.0, abs=1e-6)
    assert fit.value_error <= 1e-6
    assert abs(fit.value - 1.0) <= 10.0 * fit.value_error + 1e-12


def test_slow_trace_is_inconclusive():
    assert classify_convergence(_trace(lambda r: 2.0 + math.sqrt(r))) == INCONCLUSIVE


def test_stability_threshold_controls_smooth_traces():
    trace = _trace(lambda r: 3.0 / (1.0 + 2.0 * r))
    assert classify_convergence(trace) == CONVERGED
    assert classify_convergence(trace, ConvergenceSettings(stability=0.0)) == INCONCLUSIVE


def test_weighted_limit_on_default_schedule(bose_space):
    # (w Δu + 2 ∇w·∇u) / (8 w) with u = x^3 + y, w = (x + y)^2 at (0.3, 0.4)
    x, y = 0.3, 0.4
    w = (x + y) ** 2
    grad_w = 2.0 * (x + y)
    lw = w * 6.0 * x + 2.0 * grad_w * (3.0 * x * x + 1.0)
    result = amv_limit(bose_space, ExpressionField("x^3 + y", ("x", "y")), (x, y), RadiusSchedule(0.5))
    assert result.converged
    assert result.value == pytest.approx(lw / (8.0 * w), abs=1e-6)


def test_dirac_limit_on_default_schedule():
    u = ExpressionField("x^2 + 1", ("x", "y"))
    result = amv_limit(lebesgue_plus_dirac(2), u, (0.0, 0.0), RadiusSchedule(0.5))
    # π r^2 / (4 (1 + π r^2)) tends to 0
    assert result.converged
    assert result.value == pytest.approx(0.0, abs=1e-6)


def test_amv_at_radius_constant_is_exact(plane):
    value, err = amv_at_radius(plane, ScalarField.constant(5.0, 2), (0.3, 0.3), 0.1)
    assert value == 0.0
    assert err >= 0.0


def test_amv_limit_quadratic(line):
    result = amv_limit(line, ExpressionField("x^2", ("x",)), (0.25,), SCHEDULE, workers=1)
    assert result.converged
    # Δu / (2 (n + 2)) with n = 1
    assert result.value == pytest.approx(1.0 / 3.0, abs=1e-8)
    assert len(result.trace) == SCHEDULE.count
    assert result.as_dict()["quantity"] == "amv"


def test_amv_limit_kink_diverges(line):
    result = amv_limit(line, ExpressionField("abs(x)", ("x",)), (0.0,), SCHEDULE, workers=2)
    assert result.verdict == DIVERGENT
    assert result.rate == pytest.approx(-1.0, abs=1e-6)


def test_upper_and_lower_estimates(line):
    u = ExpressionField("x^2", ("x",))
    upper, trace = amv_upper(line, u, (0.0,), SCHEDULE, workers=1)
    lower, _ = amv_lower(line, u, (0.0,), SCHEDULE, workers=1)
    assert lower <= upper
    assert upper == pytest.approx(1.0 / 3.0, abs=1e-10)
    assert len(trace) == SCHEDULE.count


def test_schedule_failure_keeps_partial_trace(line):
    blowup = ScalarField(lambda p: np.where(p[:, 0] > 0.15, np.inf, 1.0), 1, name="blowup")
    with pytest.raises(EvaluationError) as e:
        amv_limit(line, blowup, (0.0,), SCHEDULE, workers=1)
    assert e.value.partial_trace == []


def test_dirac_auxiliary_limit():
    result = dirac_auxiliary_limit(ExpressionField("abs(x)", ("x",)), SCHEDULE)
    assert result.converged
    assert result.value == pytest.approx(0.5, abs=1e-9)
    assert result.quantity == "mean-deviation/r^1"


def test_dirac_auxiliary_needs_the_line():
    with pytest.raises(InputError):
        dirac_auxiliary_limit(ExpressionField("x", ("x", "y")), SCHEDULE)


def test_degenerate_operator_limit_on_plane(plane):
    u = ExpressionField("x^2 + y^2", ("x", "y"))
    limit = degenerate_operator_limit(plane, u, (0.1, -0.2), RadiusSchedule(0.2, 0.7, 6))
    assert limit.converged
    np.testing.assert_allclose(limit.b, 0.0, atol=1e-9)
    np.testing.assert_allclose(limit.a, np.eye(2) / 8.0, atol=1e-9)
    assert limit.value == pytest.approx(0.5, abs=1e-8)


def test_segment_remainder_limit():
    result = segment_remainder_limit(ExpressionField("x^2 + y", ("x", "y")), SCHEDULE)
    assert result.converged
    assert result.value == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_segment_remainder_needs_hessian():
    with pytest.raises(InputError):
        segment_remainder_limit(ScalarField(lambda p: p[:, 0], 1), SCHEDULE)


def test_weighted_moments_on_bose_space(bose_space):
    # w = (2 + z1 + z2)^2 around (1, 1)
    r = 0.1
    b, a, b_err, a_err = weighted_moments(bose_space, (1.0, 1.0), r)
    mass = 4.0 + r * r / 2.0
    np.testing.assert_allclose(b, 1.0 / mass, rtol=1e-9)
    assert a[0, 0] == pytest.approx((1.0 + r * r / 6.0) / (2.0 * mass), rel=1e-9)
    assert a[0, 1] == pytest.approx(r * r / (24.0 * mass), rel=1e-8)
    assert (b_err >= 0).all()
    assert (a_err >= 0).all()


def test_predicted_stratified_limit():
    space = example_complex(1)
    schedule = RadiusSchedule(0.01)
    prediction = predicted_stratified_limit(space, ExpressionField("x^2 + y^2", ("x", "y")), (0.0, 0.0), schedule)
    assert prediction.weights.sum() == pytest.approx(1.0)
    assert prediction.weights.max() == pytest.approx(1.0)
    assert sum(v is None for v in prediction.stratum_values) == len(space.strata) - 1
    assert prediction.value == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_amv_at_radius_is_linear(plane):
    u = ExpressionField("sin(x)*y + x^3", ("x", "y"))
    v = ExpressionField("exp(y) - x*y", ("x", "y"))
    x, r = (0.2, -0.3), 0.15
    combined, _ = amv_at_radius(plane, linear_combination(2.0, u, -3.0, v), x, r)
    du, _ = amv_at_radius(plane, u, x, r)
    dv, _ = amv_at_radius(plane, v, x, r)
    assert combined == pytest.approx(2.0 * du - 3.0 * dv, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("lam", [0.5, 2.0, 3.0])
def test_euclidean_scaling(plane, lam):
    # u_λ(y) = u(λ y) gives Δ_r u_λ(x) = λ² Δ_{λr} u(λ x)
    u = ExpressionField("sin(x)*y + x^3", ("x", "y"))
    scaled = u.pullback(lambda pts: lam * pts)
    x, r = np.array([0.1, 0.2]), 0.05
    left, _ = amv_at_radius(plane, scaled, x, r)
    right, _ = amv_at_radius(plane, u, lam * x, lam * r)
    assert left == pytest.approx(lam * lam * right, rel=1e-9, abs=1e-10)


def test_translation_covariance(plane):
    u = ExpressionField("exp(x)*cos(y)", ("x", "y"))
    h = np.array([0.7, -0.4])
    shifted = u.pullback(lambda pts: pts + h)
    x, r = np.array([0.1, 0.3]), 0.1
    left, _ = amv_at_radius(plane, shifted, x, r)
    right, _ = amv_at_radius(plane, u, x + h, r)
    assert left == pytest.approx(right, rel=1e-9, abs=1e-10)
