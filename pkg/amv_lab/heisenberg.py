"""The first Heisenberg group with its Carnot-Caratheodory metric.

Group law ``(x, y, t)∘(x', y', t') = (x + x', y + y', t + t' + 2(y x' - x y'))``
with horizontal frame ``X = ∂x + 2y ∂t``, ``Y = ∂y - 2x ∂t``.
"""

from __future__ import annotations

import functools
import json
import logging
import math
import os
import typing as t
from pathlib import Path

import numpy as np
import pendulum
import sympy
from scipy import integrate, optimize
from scipy.spatial import cKDTree

from amv_lab.core import BallEstimate, EffortBudget, RegionSpec
from amv_lab.exceptions import (
    ConstantsFileMissingError,
    FieldEvaluationError,
    InputError,
    NumericError,
)
from amv_lab.fields import ExpressionField, ScalarField
from amv_lab.quadrature import interval_rule

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

COORDINATES = ("x", "y", "t")
CONSTANTS_ENV = "AMV_CONSTANTS_PATH"
DEFAULT_CONSTANTS_FILE = "heisenberg_constants.json"
CONSTANTS_SCHEMA_VERSION = 1
DISTANCE_TOLERANCE = 1e-8
# |x|, |y| <= 1 and |t| <= 2/pi bound the unit ball
UNIT_BOX = np.array([1.0, 1.0, 2.0 / math.pi])
UNIT_BOX_VOLUME = 16.0 / math.pi
_SERIES_CUTOFF = 0.1


def group_mul(p: NDArray[np.float64], q: NDArray[np.float64]) -> NDArray[np.float64]:
    """Group product ``p∘q``; broadcasts over leading axes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    x = p[..., 0] + q[..., 0]
    y = p[..., 1] + q[..., 1]
    t_ = p[..., 2] + q[..., 2] + 2.0 * (p[..., 1] * q[..., 0] - p[..., 0] * q[..., 1])
    return np.stack([x, y, t_], axis=-1)


def group_inv(p: NDArray[np.float64]) -> NDArray[np.float64]:
    """Group inverse."""
    return -np.asarray(p, dtype=float)


def dilate(q: NDArray[np.float64], lam: float) -> NDArray[np.float64]:
    """Homogeneous dilation ``δ_λ(x, y, t) = (λx, λy, λ²t)``."""
    return np.asarray(q, dtype=float) * np.array([lam, lam, lam * lam])


def _area_term(phi: NDArray[np.float64]) -> NDArray[np.float64]:
    """``phi - sin(phi)cos(phi)``, with a series near 0."""
    small = phi < _SERIES_CUTOFF
    p2 = phi * phi
    series = phi**3 * (2.0 / 3.0 - p2 * (2.0 / 15.0 - p2 * (4.0 / 315.0 - p2 * 2.0 / 2835.0)))
    direct = phi - np.sin(phi) * np.cos(phi)
    return np.where(small, series, direct)


def _distance_from_angle(
    phi: NDArray[np.float64],
    rho: NDArray[np.float64],
    height: NDArray[np.float64],
) -> NDArray[np.float64]:
    with np.errstate(divide="ignore", invalid="ignore"):
        lateral = rho * phi / np.sin(phi)
        vertical = phi * np.sqrt(height / _area_term(phi))
    return np.where(phi < 0.5 * math.pi, lateral, vertical)


def cc_norm(
    q: NDArray[np.float64],
    tol: float = DISTANCE_TOLERANCE,
    max_iter: int = 200,
) -> NDArray[np.float64]:
    """``d(o, q)`` for each row of ``q``.

    The geodesic reaching ``q`` projects to a circular arc; its half-angle
    ``phi`` solves ``phi - sin(phi)cos(phi) = k sin(phi)^2`` with
    ``k = |t| / rho^2``, found by bisection on ``(0, pi)``.

    Raises:
        NumericError: the bracket on the distance is wider than ``tol``
            after ``max_iter`` steps.
    """
    pts = np.atleast_2d(np.asarray(q, dtype=float))
    if not np.all(np.isfinite(pts)):
        msg = "Heisenberg points must be finite"
        raise InputError(msg)
    rho = np.hypot(pts[:, 0], pts[:, 1])
    height = np.abs(pts[:, 2])
    out = rho.copy()
    vertical = rho == 0.0
    out[vertical] = np.sqrt(math.pi * height[vertical])
    general = ~vertical & (height > 0.0)
    if not np.any(general):
        return out
    r_g, h_g = rho[general], height[general]
    k = h_g / (r_g * r_g)
    lo = np.zeros_like(k)
    hi = np.full_like(k, math.pi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = _area_term(mid) - k * np.sin(mid) ** 2 < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 4.0 * np.finfo(float).eps * np.maximum(hi, 1e-300)):
            break
    d_lo = _distance_from_angle(np.maximum(lo, np.finfo(float).tiny), r_g, h_g)
    d_hi = _distance_from_angle(hi, r_g, h_g)
    spread = np.abs(d_hi - d_lo)
    worst = int(np.argmax(spread))
    if not spread[worst] <= tol:
        msg = f"CC distance bisection did not reach {tol:g} after {max_iter} iterations"
        raise NumericError(
            msg,
            {"point": pts[general][worst].tolist(), "bracket": [float(lo[worst]), float(hi[worst])],
             "spread": float(spread[worst])},
        )
    out[general] = 0.5 * (d_lo + d_hi)
    return out


def cc_distance(p: t.Sequence[float], q: t.Sequence[float]) -> float:
    """Carnot-Caratheodory distance ``d(o, p⁻¹∘q)``."""
    return float(cc_norm(group_mul(group_inv(p), q))[0])


class CCMetric:
    """Carnot-Caratheodory metric; neighbour search prefilters on the horizontal distance."""

    name = "carnot-caratheodory"

    def distance(self, p: NDArray[np.float64], q: NDArray[np.float64]) -> float:
        """CC distance."""
        return cc_distance(p, q)

    def distances(self, p: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
        """CC distances from ``p`` to each row."""
        return cc_norm(group_mul(group_inv(p)[None, :], np.atleast_2d(points)))

    def neighbors(
        self,
        points: NDArray[np.float64],
        r: float,
    ) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        """Strict-inequality neighbour pairs."""
        tree = cKDTree(points[:, :2])
        candidates = tree.query_ball_point(points[:, :2], r, return_sorted=True)
        rows = np.repeat(np.arange(len(points)), [len(c) for c in candidates])
        cols = np.fromiter((j for c in candidates for j in c), dtype=np.int64, count=len(rows))
        diff = group_mul(group_inv(points[rows]), points[cols])
        keep = cc_norm(diff) < r
        return rows[keep].astype(np.int64), cols[keep]


def _polygon_length(
    q: NDArray[np.float64],
    segments: int,
    max_iter: int,
) -> float:
    """Length of the shortest horizontal polygon from o to ``q``.

    Free vertices P_1..P_{n-1} (P_0 = o, P_n = (x, y)) minimize the total
    length subject to the lifted height ``2 Σ (y_i x_{i+1} - x_i y_{i+1}) = t``.
    """
    end = np.asarray(q[:2], dtype=float)
    target = float(q[2])
    s = np.linspace(0.0, 1.0, segments + 1)[1:-1]
    rho = float(np.hypot(*end))
    if rho > 1e-9:
        normal = np.array([-end[1], end[0]]) / rho
        bump = math.copysign(3.0 * abs(target) / (4.0 * rho), target)
        guess = s[:, None] * end[None, :] + (bump * 4.0 * s * (1.0 - s))[:, None] * normal[None, :]
    else:
        radius = math.sqrt(abs(target) / (4.0 * math.pi))
        theta = 2.0 * math.pi * s
        sign = math.copysign(1.0, target)
        guess = np.column_stack([radius * (1.0 - np.cos(theta)), sign * radius * np.sin(theta)])

    def vertices(z: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.vstack([np.zeros(2), z.reshape(-1, 2), end])

    def length(z: NDArray[np.float64]) -> float:
        return float(np.sum(np.linalg.norm(np.diff(vertices(z), axis=0), axis=1)))

    def length_grad(z: NDArray[np.float64]) -> NDArray[np.float64]:
        v = vertices(z)
        d = np.diff(v, axis=0)
        u = d / np.maximum(np.linalg.norm(d, axis=1), 1e-300)[:, None]
        return (u[:-1] - u[1:]).ravel()

    def height(z: NDArray[np.float64]) -> float:
        v = vertices(z)
        return float(2.0 * np.sum(v[:-1, 1] * v[1:, 0] - v[:-1, 0] * v[1:, 1])) - target

    def height_grad(z: NDArray[np.float64]) -> NDArray[np.float64]:
        v = vertices(z)
        gx = 2.0 * (v[:-2, 1] - v[2:, 1])
        gy = 2.0 * (v[2:, 0] - v[:-2, 0])
        return np.column_stack([gx, gy]).ravel()

    result = optimize.minimize(
        length,
        guess.ravel(),
        jac=length_grad,
        constraints=[{"type": "eq", "fun": height, "jac": height_grad}],
        method="SLSQP",
        options={"maxiter": max_iter, "ftol": 1e-14},
    )
    if not result.success or abs(height(result.x)) > 1e-9 * max(1.0, abs(target)):
        msg = f"Horizontal path optimisation failed: {result.message}"
        raise NumericError(msg, {"segments": segments, "iterations": int(result.nit)})
    return float(result.fun)


def discrete_control_distance(
    q: t.Sequence[float],
    segments: int = 64,
    max_iter: int = 1000,
) -> float:
    """Independent distance oracle: shortest horizontal polygons, extrapolated.

    Polygon lengths converge like ``segments**-2``; lengths at ``segments``
    and ``2 * segments`` are combined by Richardson extrapolation.
    """
    point = np.asarray(q, dtype=float)
    coarse = _polygon_length(point, segments, max_iter)
    fine = _polygon_length(point, 2 * segments, max_iter)
    return (4.0 * fine - coarse) / 3.0


@functools.lru_cache(maxsize=512)
def unit_ball_batch(seed: int, index: int, size: int) -> NDArray[np.float64]:
    """Accepted unit-ball points of one rejection-sampling batch (read-only)."""
    rng = np.random.default_rng([seed, index])
    box = (2.0 * rng.random((size, 3)) - 1.0) * UNIT_BOX
    accepted = box[cc_norm(box) < 1.0]
    accepted.setflags(write=False)
    return accepted


class HeisenbergMonteCarlo:
    """Rejection-sampling ball backend.

    Unit-ball samples are dilated and left-translated, so every ball uses the
    same random numbers for a given seed.
    """

    method = "monte-carlo"

    def __init__(self, seed: int, batch_size: int = 100_000) -> None:
        """Initialize the backend."""
        self.seed = int(seed)
        self.batch_size = int(batch_size)

    def analytic_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """No closed form for CC balls."""
        return None

    def estimate(
        self,
        x: NDArray[np.float64],
        r: float,
        f: ScalarField | None,
        budget: EffortBudget,
    ) -> BallEstimate:
        """Mass and integral over the CC ball B_r(x)."""
        reference = None
        if f is not None:
            value = float(f(x[None, :])[0])
            reference = value if math.isfinite(value) else None
        ref = 0.0 if reference is None else reference
        accepted = drawn = 0
        s1 = s2 = 0.0
        index = 0
        while drawn < budget.max_evals:
            size = min(self.batch_size, budget.max_evals - drawn)
            unit = unit_ball_batch(self.seed, index, size)
            index += 1
            drawn += size
            accepted += len(unit)
            if f is not None and len(unit):
                nodes = group_mul(x[None, :], dilate(unit, r))
                values = f(nodes)
                if not np.all(np.isfinite(values)):
                    bad = nodes[int(np.argmax(~np.isfinite(values)))]
                    msg = f"Field {f.name} is not finite at node {tuple(bad.tolist())}"
                    raise FieldEvaluationError(msg, bad)
                shifted = values - ref
                s1 += float(np.sum(shifted))
                s2 += float(np.sum(shifted * shifted))
            if accepted > 1 and f is not None:
                se = math.sqrt(max(s2 / accepted - (s1 / accepted) ** 2, 0.0) / (accepted - 1))
                if budget.mc_k * se <= budget.target_error:
                    break
            logger.debug("Heisenberg ball r=%.3g: %d/%d accepted", r, accepted, drawn)
        scale = UNIT_BOX_VOLUME * r**4
        p_hat = accepted / drawn
        mass = scale * p_hat
        mass_se = scale * math.sqrt(p_hat * (1.0 - p_hat) / drawn)
        if f is None or accepted == 0:
            return BallEstimate(
                mass=mass,
                integral=0.0,
                abs_error=budget.mc_k * mass_se,
                method=self.method,
                samples_used=drawn,
                mass_error=budget.mc_k * mass_se,
            )
        mean_dev = s1 / accepted
        var_dev = max(s2 / accepted - mean_dev**2, 0.0)
        avg_se = math.sqrt(var_dev / max(accepted - 1, 1))
        average = ref + mean_dev
        # per-draw integrand Z = scale * f * 1[accepted]
        second = (s2 + 2.0 * ref * s1 + accepted * ref * ref) / drawn
        int_se = scale * math.sqrt(max(second - (average * p_hat) ** 2, 0.0) / max(drawn - 1, 1))
        return BallEstimate(
            mass=mass,
            integral=mass * average,
            abs_error=budget.mc_k * int_se,
            method=self.method,
            samples_used=drawn,
            mass_error=budget.mc_k * mass_se,
            average_error=budget.mc_k * avg_se,
            magnitude=abs(average),
            reference=ref,
            deviation=mean_dev if reference is not None else None,
        )

    def discretize(
        self,
        region: RegionSpec,
        resolution: int,
        rng: np.random.Generator,
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Lebesgue atoms on the box (midpoint grid or uniform random)."""
        lo = np.asarray(region.lower)
        hi = np.asarray(region.upper)
        if region.sampling == "random":
            count = resolution**3
            return lo + (hi - lo) * rng.random((count, 3)), np.full(count, float(np.prod(hi - lo)) / count)
        axes = [lo[i] + (np.arange(resolution) + 0.5) * (hi[i] - lo[i]) / resolution for i in range(3)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([m.ravel() for m in mesh])
        return nodes, np.full(len(nodes), float(np.prod((hi - lo) / resolution)))

    def region_rule(
        self,
        region: RegionSpec,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Tensor Gauss rule for Lebesgue measure on the box."""
        rules = [interval_rule(lo, hi, order) for lo, hi in region.bounds]
        mesh = np.meshgrid(*(r[0] for r in rules), indexing="ij")
        wmesh = np.meshgrid(*(r[1] for r in rules), indexing="ij")
        nodes = np.column_stack([m.ravel() for m in mesh])
        return nodes, np.prod(np.stack([w.ravel() for w in wmesh]), axis=0)


def kohn_laplacian(field: ExpressionField) -> sympy.Expr:
    """``X²u + Y²u`` for an expression field on (x, y, t)."""
    if field.variables != COORDINATES:
        msg = f"Kohn Laplacian needs coordinates {COORDINATES}, got {field.variables}"
        raise InputError(msg)
    x, y, t_ = field.symbols

    def X(expr: sympy.Expr) -> sympy.Expr:
        return sympy.diff(expr, x) + 2 * y * sympy.diff(expr, t_)

    def Y(expr: sympy.Expr) -> sympy.Expr:
        return sympy.diff(expr, y) - 2 * x * sympy.diff(expr, t_)

    return sympy.simplify(X(X(field.expr)) + Y(Y(field.expr)))


def heisenberg_moment_reference() -> dict[str, float]:
    """Unit-ball volume, ``∫ x²`` and ``c = ½ ⨍ x²`` by 1-D quadrature.

    The ball boundary is parametrized by the geodesic angle ``phi``: at
    horizontal radius ``sin(phi)/phi`` it reaches height
    ``(phi - sin(phi)cos(phi)) / phi²``.
    """

    def rho(phi: float) -> float:
        return math.sin(phi) / phi

    def height(phi: float) -> float:
        return float(_area_term(np.array([phi]))[0]) / (phi * phi)

    def drho(phi: float) -> float:
        return abs((phi * math.cos(phi) - math.sin(phi)) / (phi * phi))

    volume_part, _ = integrate.quad(lambda p: height(p) * rho(p) * drho(p), 0.0, math.pi, epsabs=1e-14, limit=200)
    moment_part, _ = integrate.quad(lambda p: height(p) * rho(p) ** 3 * drho(p), 0.0, math.pi, epsabs=1e-14, limit=200)
    volume = 4.0 * math.pi * volume_part
    second_moment = 2.0 * math.pi * moment_part
    return {"volume": volume, "second_moment": second_moment, "c": 0.5 * second_moment / volume}


def constants_path(path: str | os.PathLike[str] | None = None) -> Path:
    """Resolve the constants file: explicit path, then ``AMV_CONSTANTS_PATH``, then the cwd."""
    if path is not None:
        return Path(path)
    return Path(os.environ.get(CONSTANTS_ENV, DEFAULT_CONSTANTS_FILE))


def unit_ball_sample(samples: int, seed: int, batch_size: int = 100_000) -> NDArray[np.float64]:
    """Accepted points from ``samples`` uniform draws of the bounding box."""
    if samples < 2:
        msg = "At least two samples are needed"
        raise InputError(msg)
    drawn = 0
    index = 0
    parts: list[NDArray[np.float64]] = []
    while drawn < samples:
        size = min(batch_size, samples - drawn)
        parts.append(unit_ball_batch(seed, index, size))
        drawn += size
        index += 1
    return np.concatenate(parts)


def generate_constants(samples: int, seed: int, batch_size: int = 100_000) -> dict[str, t.Any]:
    """Estimate ``c = ½ ⨍_{B_1(o)} x²`` by seeded rejection sampling."""
    half_sq = 0.5 * unit_ball_sample(samples, seed, batch_size)[:, 0] ** 2
    c_estimate = float(np.mean(half_sq))
    std_error = float(np.std(half_sq, ddof=1) / math.sqrt(len(half_sq)))
    logger.info("Heisenberg constant c = %.6f ± %.2g from %d accepted samples", c_estimate, std_error, len(half_sq))
    return {
        "schema_version": CONSTANTS_SCHEMA_VERSION,
        "c_estimate": c_estimate,
        "std_error": std_error,
        "samples": int(samples),
        "accepted": int(len(half_sq)),
        "seed": int(seed),
        "generated_at": pendulum.now("UTC").to_iso8601_string(),
    }


def write_constants(constants: t.Mapping[str, t.Any], path: str | os.PathLike[str] | None = None) -> Path:
    """Write the constants file and return its path."""
    target = constants_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(dict(constants), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote Heisenberg constants to %s", target)
    return target


def load_constants(path: str | os.PathLike[str] | None = None) -> dict[str, t.Any]:
    """Read the constants file.

    Raises:
        ConstantsFileMissingError: the file does not exist or is incomplete.
    """
    source = constants_path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        msg = f"Heisenberg constants file {source} not found; run `amv-lab constants` first"
        raise ConstantsFileMissingError(msg) from e
    except json.JSONDecodeError as e:
        msg = f"Heisenberg constants file {source} is not valid JSON"
        raise ConstantsFileMissingError(msg) from e
    missing = {"c_estimate", "std_error", "samples", "seed"} - set(data)
    if missing:
        msg = f"Heisenberg constants file {source} lacks {sorted(missing)}"
        raise ConstantsFileMissingError(msg)
    return data
