"""Mean-value Laplacians at fixed radius and their small-radius limits.

``Δ_{μ,r} u(x) = r^-2 (⨍_{B_r(x)} u dμ - u(x))`` is evaluated along a
geometric radius schedule; the resulting trace is classified as converged
(weighted polynomial extrapolation to r = 0), divergent (a clean negative
power law) or inconclusive.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import typing as t

import numpy as np
from scipy import integrate, stats

from amv_lab.core import EffortBudget, Point, SpaceHandle, ball_integrate
from amv_lab.exceptions import (
    AmvLabError,
    DomainError,
    EvaluationError,
    InputError,
    TraceTooShortError,
)
from amv_lab.fields import ScalarField

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

CONVERGED = "converged"
DIVERGENT = "divergent"
INCONCLUSIVE = "inconclusive"
VERDICTS = (CONVERGED, DIVERGENT, INCONCLUSIVE)
_EPS = np.finfo(float).eps
_SIGMA_FLOOR = 1e-150


@dataclasses.dataclass(frozen=True)
class RadiusSchedule:
    """Radii ``r_k = r0 * ratio**k`` for ``k < count``."""

    r0: float
    ratio: float = 0.7
    count: int = 12

    def __post_init__(self) -> None:
        """Validate the schedule."""
        if not self.r0 > 0 or not math.isfinite(self.r0):
            msg = f"r0 must be positive, got {self.r0}"
            raise InputError(msg)
        if not 0.0 < self.ratio < 1.0:
            msg = f"ratio must lie in (0, 1), got {self.ratio}"
            raise InputError(msg)
        if self.count < 4:
            msg = f"A schedule needs at least 4 radii, got {self.count}"
            raise InputError(msg)

    @property
    def radii(self) -> list[float]:
        """Radii, largest first."""
        return [self.r0 * self.ratio**k for k in range(self.count)]

    @classmethod
    def default(cls, feature_distance: float = 1.0) -> RadiusSchedule:
        """Half the distance to the nearest boundary or feature, ratio 0.7, 12 radii."""
        return cls(0.5 * feature_distance)


@dataclasses.dataclass(frozen=True)
class TracePoint:
    """One radius of a schedule."""

    r: float
    value: float
    abs_error: float

    def as_tuple(self) -> tuple[float, float, float]:
        """(r, value, abs_error)."""
        return (self.r, self.value, self.abs_error)


@dataclasses.dataclass(frozen=True)
class ConvergenceSettings:
    """Thresholds for trace classification.

    Attributes:
        alpha_min: A trace is divergent when its log-log slope is <= -alpha_min.
        r2_min: Minimum R² of the log-log regression.
        residual_factor: A fit converges when its worst residual is at most
            this multiple of the largest radius error.
        relative_floor: Residual tolerance relative to the largest |value|.
        max_degree: Highest extrapolation polynomial degree in r.
        snr: Minimum |value| / abs_error for the power-law test.
        tail_window: Number of smallest radii used by the upper/lower estimates.
        stability: Largest intercept spread, relative to the largest |value|,
            accepted for traces no polynomial fits exactly.
    """

    alpha_min: float = 0.5
    r2_min: float = 0.99
    residual_factor: float = 5.0
    relative_floor: float = 1e-10
    max_degree: int = 5
    snr: float = 10.0
    tail_window: int = 4
    stability: float = 1e-6

    def __post_init__(self) -> None:
        """Validate thresholds."""
        if (
            not self.alpha_min > 0
            or not 0 < self.r2_min <= 1
            or self.max_degree < 1
            or self.tail_window < 1
            or not 0 <= self.stability < 1
        ):
            msg = f"Invalid convergence settings: {self!r}"
            raise InputError(msg)


@dataclasses.dataclass(frozen=True)
class TraceFit:
    """Outcome of classifying one trace."""

    verdict: str
    value: float = math.nan
    value_error: float = math.inf
    rate: float | None = None
    r_squared: float | None = None
    fit_residual: float = math.inf
    degree: int | None = None


@dataclasses.dataclass(frozen=True)
class AmvResult:
    """Trace of a radius schedule with its verdict.

    ``value`` and ``value_error`` are meaningful for converged traces only;
    ``rate`` is the log-log slope when one was fitted.
    """

    trace: list[TracePoint]
    verdict: str
    value: float
    value_error: float
    rate: float | None
    fit_residual: float
    r_squared: float | None = None
    degree: int | None = None
    quantity: str = "amv"

    @classmethod
    def from_fit(cls, trace: list[TracePoint], fit: TraceFit, quantity: str = "amv") -> AmvResult:
        """Combine a trace and its classification."""
        return cls(
            trace=trace,
            verdict=fit.verdict,
            value=fit.value,
            value_error=fit.value_error,
            rate=fit.rate,
            fit_residual=fit.fit_residual,
            r_squared=fit.r_squared,
            degree=fit.degree,
            quantity=quantity,
        )

    @property
    def converged(self) -> bool:
        """Whether the trace converged."""
        return self.verdict == CONVERGED

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {
            "quantity": self.quantity,
            "verdict": self.verdict,
            "value": self.value,
            "value_error": self.value_error,
            "rate": self.rate,
            "fit_residual": self.fit_residual,
            "r_squared": self.r_squared,
            "degree": self.degree,
            "trace": [list(p.as_tuple()) for p in self.trace],
        }


def _as_arrays(
    trace: t.Sequence[TracePoint | tuple[float, float, float]],
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    rows = np.array([p.as_tuple() if isinstance(p, TracePoint) else tuple(p) for p in trace], dtype=float)
    return rows[:, 0], rows[:, 1], rows[:, 2]


def _power_law(r: NDArray[np.float64], v: NDArray[np.float64]) -> tuple[float, float]:
    fit = stats.linregress(np.log(r), np.log(np.abs(v)))
    return float(fit.slope), float(fit.rvalue**2)


def _polyfit(
    s: NDArray[np.float64],
    v: NDArray[np.float64],
    sigma: NDArray[np.float64],
    degree: int,
) -> tuple[NDArray[np.float64], float]:
    """Weighted fit in scaled radius; returns coefficients and intercept std."""
    if len(s) > degree + 1:
        coeffs, cov = np.polyfit(s, v, degree, w=1.0 / sigma, cov="unscaled")
        return coeffs, float(math.sqrt(max(cov[-1, -1], 0.0)))
    coeffs = np.polyfit(s, v, degree, w=1.0 / sigma)
    return coeffs, 0.0


def _stable_intercept(
    s: NDArray[np.float64],
    v: NDArray[np.float64],
    sigma: NDArray[np.float64],
    max_degree: int,
) -> TraceFit | None:
    """Most stable intercept over fits that drop the largest radii.

    A fit of degree ``d`` on the radii left after dropping the ``k`` largest
    is compared with degree ``d + 1`` on the same radii and with degree ``d``
    after one more drop. The pair with the smallest intercept spread wins and
    the spread becomes its ``value_error``.
    """
    fits: dict[tuple[int, int], tuple[NDArray[np.float64], float]] = {}

    def fit(degree: int, drop: int) -> tuple[NDArray[np.float64], float]:
        if (degree, drop) not in fits:
            fits[degree, drop] = _polyfit(s[drop:], v[drop:], sigma[drop:], degree)
        return fits[degree, drop]

    best = None
    for degree in range(1, max_degree):
        for drop in range(len(s) - degree - 2):
            coeffs, intercept_std = fit(degree, drop)
            value = float(coeffs[-1])
            spread = max(
                abs(float(fit(degree + 1, drop)[0][-1]) - value),
                abs(float(fit(degree, drop + 1)[0][-1]) - value),
                intercept_std,
            )
            if best is None or spread < best.value_error:
                residual = float(np.max(np.abs(np.polyval(coeffs, s[drop:]) - v[drop:])))
                best = TraceFit(CONVERGED, value=value, value_error=spread, fit_residual=residual, degree=degree)
    return best


def fit_trace(
    trace: t.Sequence[TracePoint | tuple[float, float, float]],
    settings: ConvergenceSettings | None = None,
) -> TraceFit:
    """Classify a trace and extrapolate it when it converges.

    The power-law test runs first and only when every value stands clear of
    its error bar. Polynomials ``A + B r + ...`` of increasing degree are then
    fitted with weights ``1 / abs_error``; the first whose worst residual is
    within tolerance gives the limit ``A``. When none is, the trace still
    converges if the intercept is stable across neighbouring degrees and
    across dropping the largest radii, to within ``stability`` of the trace
    scale; the spread is reported as ``value_error``.

    Raises:
        TraceTooShortError: fewer than 4 radii.
    """
    settings = settings or ConvergenceSettings()
    if len(trace) < 4:
        msg = f"Need at least 4 radii to classify a trace, got {len(trace)}"
        raise TraceTooShortError(msg)
    r, v, e = _as_arrays(trace)
    if not (np.all(np.isfinite(v)) and np.all(r > 0)):
        return TraceFit(INCONCLUSIVE)
    rate = r_squared = None
    if np.all(np.abs(v) > settings.snr * e) and np.all(v != 0):
        rate, r_squared = _power_law(r, v)
        if rate <= -settings.alpha_min and r_squared >= settings.r2_min:
            return TraceFit(DIVERGENT, rate=rate, r_squared=r_squared)
    scale = float(np.max(np.abs(v)))
    if scale == 0.0:
        return TraceFit(CONVERGED, value=0.0, value_error=float(np.max(e)), fit_residual=0.0, degree=0)
    tolerance = max(settings.residual_factor * float(np.max(e)), settings.relative_floor * scale)
    sigma = np.maximum(e, max(settings.relative_floor * scale, _SIGMA_FLOOR))
    s = r / r.max()
    for degree in range(1, min(settings.max_degree, len(r) - 2) + 1):
        coeffs, intercept_std = _polyfit(s, v, sigma, degree)
        residual = float(np.max(np.abs(np.polyval(coeffs, s) - v)))
        if residual > tolerance:
            continue
        value = float(coeffs[-1])
        # drop the largest radius and refit at the same degree
        tail_shift = 0.0
        if len(r) - 1 >= degree + 2:
            tail_coeffs, _ = _polyfit(s[1:], v[1:], sigma[1:], degree)
            tail_shift = abs(float(tail_coeffs[-1]) - value)
        return TraceFit(
            CONVERGED,
            value=value,
            value_error=max(intercept_std, tail_shift),
            rate=rate,
            r_squared=r_squared,
            fit_residual=residual,
            degree=degree,
        )
    # smooth but non-polynomial traces: no degree is exact, the intercept still settles
    stable = _stable_intercept(s, v, sigma, min(settings.max_degree, len(r) - 2))
    if stable is not None and stable.value_error <= max(tolerance, settings.stability * scale):
        return dataclasses.replace(stable, rate=rate, r_squared=r_squared)
    return TraceFit(INCONCLUSIVE, rate=rate, r_squared=r_squared)


def classify_convergence(
    trace: t.Sequence[TracePoint | tuple[float, float, float]],
    settings: ConvergenceSettings | None = None,
) -> str:
    """Verdict of :func:`fit_trace`."""
    return fit_trace(trace, settings).verdict


def amv_at_radius(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    r: float,
    budget: EffortBudget | None = None,
) -> tuple[float, float]:
    """``Δ_{μ,r} u(x)`` and its error bar.

    The ball average is taken relative to ``u(x)`` so constants give exactly 0.
    A roundoff floor proportional to the integrand's size is added to the
    integration error.
    """
    return auxiliary_at_radius(space, u, x, r, 2.0, budget)


def auxiliary_at_radius(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    r: float,
    power: float,
    budget: EffortBudget | None = None,
) -> tuple[float, float]:
    """``r^-power (⨍_{B_r(x)} u dμ - u(x))`` and its error bar."""
    xa = space.point(x)
    centre = float(u(xa[None, :])[0])
    if not math.isfinite(centre):
        msg = f"Field {u.name} is not finite at the centre {tuple(xa.tolist())}"
        raise DomainError(msg)
    est = ball_integrate(space, xa, r, u, budget)
    if est.deviation is not None:
        deviation = est.deviation
    else:
        deviation = est.average - centre
    scale = r**power
    floor = 64.0 * _EPS * (est.magnitude + abs(centre))
    return deviation / scale, (est.average_error + floor) / scale


def _schedule_trace(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None,
    power: float,
    workers: int | None,
) -> list[TracePoint]:
    if workers is None:
        from amv_lab.config import worker_count

        workers = worker_count()
    radii = schedule.radii

    def one(r: float) -> tuple[float, float]:
        return auxiliary_at_radius(space, u, x, r, power, budget)

    trace: list[TracePoint] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(one, radii)
        try:
            for r, (value, err) in zip(radii, results):
                logger.debug("r=%.4g value=%.10g err=%.2g", r, value, err)
                trace.append(TracePoint(r, value, err))
        except AmvLabError as e:
            msg = f"Evaluation failed at r={radii[len(trace)]:.4g}: {e}"
            raise EvaluationError(msg, [p.as_tuple() for p in trace]) from e
    return trace


def auxiliary_limit(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    *,
    power: float = 2.0,
    settings: ConvergenceSettings | None = None,
    workers: int | None = None,
) -> AmvResult:
    """Limit of ``r^-power (⨍_{B_r(x)} u dμ - u(x))`` along ``schedule``.

    Raises:
        EvaluationError: a radius failed; the partial trace is attached.
    """
    trace = _schedule_trace(space, u, x, schedule, budget, power, workers)
    fit = fit_trace(trace, settings)
    quantity = "amv" if power == 2.0 else f"mean-deviation/r^{power:g}"
    logger.info("%s of %s at %s: %s", quantity, u.name, tuple(space.point(x).tolist()), fit.verdict)
    return AmvResult.from_fit(trace, fit, quantity)


def amv_limit(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    *,
    settings: ConvergenceSettings | None = None,
    workers: int | None = None,
) -> AmvResult:
    """``Δ_μ u(x)`` as the small-radius limit of ``Δ_{μ,r} u(x)``.

    Raises:
        EvaluationError: a radius failed; the partial trace is attached.
    """
    return auxiliary_limit(space, u, x, schedule, budget, power=2.0, settings=settings, workers=workers)


def _tail_extreme(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None,
    settings: ConvergenceSettings | None,
    pick: t.Callable[[t.Iterable[float]], float],
    workers: int | None,
) -> tuple[float, list[TracePoint]]:
    settings = settings or ConvergenceSettings()
    trace = _schedule_trace(space, u, x, schedule, budget, 2.0, workers)
    window = trace[-settings.tail_window :]
    return pick(p.value for p in window), trace


def amv_upper(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    *,
    settings: ConvergenceSettings | None = None,
    workers: int | None = None,
) -> tuple[float, list[TracePoint]]:
    """Estimate of ``limsup Δ_{μ,r} u(x)``: the maximum over the smallest radii.

    This is a heuristic. It is exact only when ``Δ_{μ,r} u(x)`` is eventually
    monotone in r; no finite trace determines a limsup.
    """
    return _tail_extreme(space, u, x, schedule, budget, settings, max, workers)


def amv_lower(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    *,
    settings: ConvergenceSettings | None = None,
    workers: int | None = None,
) -> tuple[float, list[TracePoint]]:
    """Estimate of ``liminf Δ_{μ,r} u(x)``; see :func:`amv_upper`."""
    return _tail_extreme(space, u, x, schedule, budget, settings, min, workers)


@dataclasses.dataclass(frozen=True)
class MomentLimit:
    """First and second centred moments of small balls and the operator they define.

    ``b = lim r^-2 ⨍ (y - x) dμ`` and ``a_ij = lim (2r²)^-1 ⨍ (y - x)_i (y - x)_j dμ``.
    """

    b: NDArray[np.float64]
    a: NDArray[np.float64]
    b_error: NDArray[np.float64]
    a_error: NDArray[np.float64]
    value: float | None
    value_error: float | None
    converged: bool


def weighted_moments(
    space: SpaceHandle,
    x: Point | t.Sequence[float],
    r: float,
    budget: EffortBudget | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """``b^r``, ``a^r`` and their error bars at one radius."""
    xa = space.point(x)
    n = space.ambient_dim
    b = np.zeros(n)
    b_err = np.zeros(n)
    a = np.zeros((n, n))
    a_err = np.zeros((n, n))
    for i in range(n):
        f = ScalarField(lambda p, i=i: p[:, i] - xa[i], n, name=f"y{i}-x{i}")
        est = ball_integrate(space, xa, r, f, budget)
        b[i] = est.average / r**2
        b_err[i] = (est.average_error + 64.0 * _EPS * est.magnitude) / r**2
        for j in range(i, n):
            g = ScalarField(
                lambda p, i=i, j=j: (p[:, i] - xa[i]) * (p[:, j] - xa[j]),
                n,
                name=f"y{i}y{j}",
            )
            est = ball_integrate(space, xa, r, g, budget)
            a[i, j] = a[j, i] = est.average / (2.0 * r * r)
            a_err[i, j] = a_err[j, i] = (est.average_error + 64.0 * _EPS * est.magnitude) / (2.0 * r * r)
    return b, a, b_err, a_err


def degenerate_operator_limit(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    settings: ConvergenceSettings | None = None,
) -> MomentLimit:
    """Extrapolate the ball moments and form ``Σ a_ij ∂_ij u + b·∇u`` at ``x``.

    ``u`` needs gradient and Hessian oracles for the operator value; without
    them only the moments are returned.
    """
    xa = space.point(x)
    n = space.ambient_dim
    radii = schedule.radii
    samples = [weighted_moments(space, xa, r, budget) for r in radii]

    def extrapolate(
        pick: t.Callable[[tuple[t.Any, ...]], float],
        err: t.Callable[[tuple[t.Any, ...]], float],
    ) -> TraceFit:
        trace = [TracePoint(r, pick(s), err(s)) for r, s in zip(radii, samples)]
        return fit_trace(trace, settings)

    b = np.zeros(n)
    b_e = np.zeros(n)
    a = np.zeros((n, n))
    a_e = np.zeros((n, n))
    converged = True
    for i in range(n):
        fit = extrapolate(lambda s, i=i: s[0][i], lambda s, i=i: s[2][i])
        converged &= fit.verdict == CONVERGED
        b[i], b_e[i] = fit.value, fit.value_error
        for j in range(i, n):
            fit = extrapolate(lambda s, i=i, j=j: s[1][i, j], lambda s, i=i, j=j: s[3][i, j])
            converged &= fit.verdict == CONVERGED
            a[i, j] = a[j, i] = fit.value
            a_e[i, j] = a_e[j, i] = fit.value_error
    value = value_error = None
    if u.has_derivatives and converged:
        grad = u.gradient(xa)
        hess = u.hessian(xa)
        value = float(np.sum(a * hess) + np.dot(b, grad))
        value_error = float(np.sum(a_e * np.abs(hess)) + np.dot(b_e, np.abs(grad)))
    return MomentLimit(
        b=b, a=a, b_error=b_e, a_error=a_e, value=value, value_error=value_error, converged=bool(converged),
    )


def dirac_auxiliary_limit(
    u: ScalarField,
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    settings: ConvergenceSettings | None = None,
) -> AmvResult:
    """``b = lim r^-1 ⨍_{(-r, r)} (u - u(o)) dL¹`` at the origin of the line.

    When this limit exists, the AMV Laplacian of ``L¹ + δ_o`` at o equals ``2b``.
    """
    from amv_lab.spaces import euclidean_lebesgue

    if u.dim != 1:
        msg = "The Dirac auxiliary limit is defined on the line"
        raise InputError(msg)
    return auxiliary_limit(euclidean_lebesgue(1), u, (0.0,), schedule, budget, power=1.0, settings=settings)


@dataclasses.dataclass(frozen=True)
class StratifiedPrediction:
    """Limit predicted from stratum weights and per-stratum AMV values."""

    weights: NDArray[np.float64]
    stratum_values: list[AmvResult | None]
    value: float | None
    value_error: float | None


def predicted_stratified_limit(
    space: SpaceHandle,
    u: ScalarField,
    x: Point | t.Sequence[float],
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    settings: ConvergenceSettings | None = None,
) -> StratifiedPrediction:
    """``Σ α_i Δ_{μ_i} u(x)`` over the strata of lowest local dimension at ``x``.

    Strata through ``x`` with the smallest Ahlfors exponent there dominate
    small balls; their weights ``α_i`` are the mass shares at the smallest
    radius, renormalized among them. Every other stratum has weight 0.
    """
    from amv_lab.spaces import stratified_complex, stratum_weights

    xa = space.point(x)
    ratios = stratum_weights(space, xa, schedule.radii[-1:])[-1]
    through = [s.contains(xa) for s in space.strata]
    if not any(through):
        msg = f"No stratum passes through {tuple(xa.tolist())}"
        raise DomainError(msg)
    lowest = min(s.local_dim(xa) for s, inside in zip(space.strata, through) if inside)
    dominant = np.array(
        [inside and s.local_dim(xa) == lowest for s, inside in zip(space.strata, through)],
    )
    weights = np.where(dominant, ratios, 0.0)
    weights = weights / np.sum(weights)
    values: list[AmvResult | None] = []
    total = 0.0
    total_err = 0.0
    ok = True
    for stratum, alpha in zip(space.strata, weights):
        if alpha == 0.0:
            values.append(None)
            continue
        result = amv_limit(stratified_complex([stratum]), u, xa, schedule, budget, settings=settings)
        values.append(result)
        if not result.converged:
            ok = False
            continue
        total += alpha * result.value
        total_err += alpha * result.value_error
    return StratifiedPrediction(
        weights=weights,
        stratum_values=values,
        value=total if ok else None,
        value_error=total_err if ok else None,
    )


def segment_remainder_limit(
    u: ScalarField,
    schedule: RadiusSchedule,
    settings: ConvergenceSettings | None = None,
) -> AmvResult:
    """``lim r^-3 ∫_0^r ∂²_xx u(s, 0) (r - s)² / 2 ds`` along the schedule.

    This is the second-order Taylor remainder along ``[0, r] × {0}``, reported
    for the segment-plus-square complex without asserting a closed form.
    """
    if not u.has_derivatives:
        msg = f"Field {u.name} has no Hessian oracle"
        raise InputError(msg)
    origin = np.zeros(u.dim)

    def uxx(s: float) -> float:
        p = origin.copy()
        p[0] = s
        return float(u.hessian(p)[0, 0])

    trace = []
    for r in schedule.radii:
        value, err = integrate.quad(lambda s, r=r: uxx(s) * (r - s) ** 2 / 2.0, 0.0, r, epsabs=1e-15, epsrel=1e-12)
        trace.append(TracePoint(r, value / r**3, (err + 64.0 * _EPS * abs(value)) / r**3))
    return AmvResult.from_fit(trace, fit_trace(trace, settings), "segment-remainder")
