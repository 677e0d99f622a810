"""Strata of stratified measures and the quadrature / Monte Carlo integrator over them.

Every built-in space except the Heisenberg group is a finite sum of strata:
Lebesgue pieces (optionally weighted, optionally restricted to a box), Dirac
atoms, straight segments, circles and graphs of functions over an interval.
"""

from __future__ import annotations

import abc
import dataclasses
import logging
import math
import typing as t

import numpy as np

from amv_lab import quadrature
from amv_lab.core import BallEstimate, EffortBudget, RegionSpec
from amv_lab.exceptions import (
    DomainError,
    FieldEvaluationError,
    InputError,
    MissingConstantsError,
)
from amv_lab.fields import ExpressionField, ScalarField, field_from_spec

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    Rule = t.Tuple[NDArray[np.float64], NDArray[np.float64]]

logger = logging.getLogger(__name__)

COORDINATES = ("x", "y", "z")
UNIT_BALL_VOLUME = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}
_TOL = 1e-12
_MC_BATCH = 100_000


def _near(a: NDArray[np.float64], b: NDArray[np.float64]) -> bool:
    return bool(np.allclose(a, b, rtol=0.0, atol=_TOL))


class Stratum(abc.ABC):
    """One piece μ_j of a stratified measure."""

    kind: t.ClassVar[str]
    sampled: t.ClassVar[bool] = True

    def __init__(
        self,
        ambient_dim: int,
        ahlfors_dim: float,
        *,
        density: str | None = None,
        ahlfors_constants: tuple[float, float] | None = None,
        vertex_dims: t.Mapping[tuple[float, ...], float] | None = None,
    ) -> None:
        """Initialize shared stratum state.

        Args:
            ambient_dim: Dimension of the ambient chart.
            ahlfors_dim: Ahlfors dimension Q away from declared vertices.
            density: Density expression in the ambient coordinates, None for 1.
            ahlfors_constants: (c, C) with c r^Q <= μ_j(B_r(x)) <= C r^Q.
            vertex_dims: Pointwise Q overrides at named vertices.
        """
        self.ambient_dim = ambient_dim
        self.ahlfors_dim = float(ahlfors_dim)
        self.density_text = density
        self.density: ScalarField | None = (
            None if density is None else field_from_spec(density, COORDINATES[:ambient_dim])
        )
        self.ahlfors_constants = ahlfors_constants
        self.vertex_dims = {tuple(float(c) for c in k): float(v) for k, v in (vertex_dims or {}).items()}

    @abc.abstractmethod
    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        """Nodes and geometric weights on ``support ∩ B_r(x)``."""

    @abc.abstractmethod
    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        """Uniform samples of a parameter box covering the ball, with unbiased weights."""

    @abc.abstractmethod
    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        """Midpoint (or random) atoms of ``support ∩ region`` with geometric weights."""

    @abc.abstractmethod
    def contains(self, x: NDArray[np.float64]) -> bool:
        """Whether ``x`` lies on the closed support."""

    @abc.abstractmethod
    def parameters(self) -> dict[str, t.Any]:
        """Kind-specific descriptor entries."""

    def geometric_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Closed-form geometric measure of ``support ∩ B_r(x)``, if known."""
        return None

    def bounding_box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """Closed box containing the support, None when unbounded."""
        return None

    def directions(self, vertex: NDArray[np.float64]) -> list[NDArray[np.float64]]:
        """Outgoing unit tangents at ``vertex`` (curve strata only)."""
        return []

    def ball_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float] = (),
    ) -> Rule:
        """Quadrature for ``∫_{B_r(x)} g dμ_j`` (weights include the density)."""
        nodes, weights = self._geometric_rule(x, r, order, breakpoints)
        return nodes, self._weighted(nodes, weights)

    def ball_samples(self, x: NDArray[np.float64], r: float, n: int, rng: np.random.Generator) -> Rule:
        """Monte Carlo nodes whose weighted sum is unbiased for ``∫_{B_r(x)} g dμ_j``."""
        nodes, weights = self._geometric_samples(x, r, n, rng)
        inside = np.linalg.norm(nodes - x, axis=1) < r
        return nodes, self._weighted(nodes, weights) * inside

    def discretize(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        """Atoms and weights for the cloud builder."""
        nodes, weights = self._geometric_grid(region, resolution, rng)
        if len(nodes):
            inside = region.contains(nodes)
            nodes, weights = nodes[inside], weights[inside]
        return nodes, self._weighted(nodes, weights)

    def region_rule(self, region: RegionSpec, order: int, breakpoints: t.Sequence[float]) -> Rule:
        """Quadrature for ``∫_region g dμ_j``."""
        msg = f"No region quadrature for {self.kind} strata"
        raise DomainError(msg)

    def analytic_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Closed-form μ_j(B_r(x)) when the density is 1."""
        if self.density is not None:
            return None
        return self.geometric_mass(x, r)

    def local_dim(self, x: NDArray[np.float64]) -> float:
        """Ahlfors exponent at ``x``, honouring vertex overrides."""
        for vertex, q in self.vertex_dims.items():
            if _near(np.asarray(vertex), x):
                return q
        return self.ahlfors_dim

    def descriptor(self) -> dict[str, t.Any]:
        """Serializable description."""
        out: dict[str, t.Any] = {"kind": self.kind, **self.parameters()}
        if self.density_text is not None:
            out["density"] = self.density_text
        if self.ahlfors_constants is not None:
            out["ahlfors_constants"] = list(self.ahlfors_constants)
        if self.vertex_dims:
            out["vertex_dims"] = [[list(k), v] for k, v in sorted(self.vertex_dims.items())]
        return out

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Non-smooth points of the density (1-D only)."""
        return () if self.density is None else self.density.breakpoints

    def _weighted(self, nodes: NDArray[np.float64], weights: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.density is None or len(nodes) == 0:
            return weights
        return weights * self.density(nodes)


class LebesgueStratum(Stratum):
    """(Weighted) Lebesgue measure on R^n, optionally restricted to a box."""

    kind = "lebesgue"

    def __init__(
        self,
        n: int,
        density: str | None = None,
        box: t.Sequence[t.Sequence[float]] | None = None,
        **kwargs: t.Any,
    ) -> None:
        """Initialize the stratum.

        Args:
            n: Dimension, 1 to 3.
            density: Density expression, None for Lebesgue measure.
            box: Per-axis (low, high) bounds of the domain (n <= 2).
            kwargs: Passed to :class:`Stratum`.
        """
        if n not in UNIT_BALL_VOLUME:
            msg = f"Lebesgue strata exist for n in 1..3, got {n}"
            raise InputError(msg)
        if box is not None and n == 3:
            msg = "Restricted domains are supported for n <= 2"
            raise InputError(msg)
        kwargs.setdefault("ahlfors_dim", n)
        super().__init__(n, density=density, **kwargs)
        self.box = None if box is None else tuple((float(lo), float(hi)) for lo, hi in box)
        if self.box is not None and (len(self.box) != n or any(hi <= lo for lo, hi in self.box)):
            msg = f"Box {box} is not a nonempty {n}-dimensional box"
            raise InputError(msg)

    def parameters(self) -> dict[str, t.Any]:
        """Descriptor entries."""
        return {"n": self.ambient_dim, "box": None if self.box is None else [list(b) for b in self.box]}

    def contains(self, x: NDArray[np.float64]) -> bool:
        """Closed-box membership."""
        if self.box is None:
            return True
        return all(lo - _TOL <= c <= hi + _TOL for c, (lo, hi) in zip(x, self.box))

    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        if self.ambient_dim == 1:
            cuts = (*breakpoints, *self.breakpoints)
            return quadrature.ball_rule_1d(float(x[0]), r, order, cuts, None if self.box is None else self.box[0])
        if self.ambient_dim == 2:
            return quadrature.disk_box_rule(x, r, self.box, order)
        return quadrature.ball3_rule(x, r, order)

    def geometric_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Length, area or volume of the (clipped) ball."""
        n = self.ambient_dim
        if self.box is None:
            return UNIT_BALL_VOLUME[n] * r**n
        if n == 1:
            lo, hi = self.box[0]
            return max(0.0, min(hi, x[0] + r) - max(lo, x[0] - r))
        (ax, bx), (ay, by) = self.box
        far = [x[0] - ax >= r, bx - x[0] >= r, x[1] - ay >= r, by - x[1] >= r]
        if all(far):
            return math.pi * r * r
        # centre on one edge, ball clear of the other three: a half disk
        on_edge = [abs(x[0] - ax) <= _TOL, abs(bx - x[0]) <= _TOL, abs(x[1] - ay) <= _TOL, abs(by - x[1]) <= _TOL]
        for i in range(4):
            if on_edge[i] and all(far[j] for j in range(4) if j != i):
                return 0.5 * math.pi * r * r
        return None

    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        lo, hi = self._clip(x - r, x + r)
        volume = float(np.prod(hi - lo))
        if not volume > 0:
            return np.zeros((0, self.ambient_dim)), np.zeros(0)
        nodes = lo + (hi - lo) * rng.random((n, self.ambient_dim))
        return nodes, np.full(n, volume / n)

    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        lo, hi = self._clip(np.asarray(region.lower), np.asarray(region.upper))
        if np.any(hi <= lo):
            return np.zeros((0, self.ambient_dim)), np.zeros(0)
        n = self.ambient_dim
        if region.sampling == "random":
            count = resolution**n
            nodes = lo + (hi - lo) * rng.random((count, n))
            return nodes, np.full(count, float(np.prod(hi - lo)) / count)
        axes = [lo[i] + (np.arange(resolution) + 0.5) * (hi[i] - lo[i]) / resolution for i in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.column_stack([m.ravel() for m in mesh])
        cell = float(np.prod((hi - lo) / resolution))
        return nodes, np.full(len(nodes), cell)

    def region_rule(self, region: RegionSpec, order: int, breakpoints: t.Sequence[float]) -> Rule:
        """Tensor Gauss rule on ``region ∩ box``."""
        lo, hi = self._clip(np.asarray(region.lower), np.asarray(region.upper))
        if np.any(hi <= lo):
            return np.zeros((0, self.ambient_dim)), np.zeros(0)
        cuts = (*breakpoints, *self.breakpoints) if self.ambient_dim == 1 else ()
        rules = [quadrature.interval_rule(lo[i], hi[i], order, cuts) for i in range(self.ambient_dim)]
        mesh = np.meshgrid(*(r[0] for r in rules), indexing="ij")
        wmesh = np.meshgrid(*(r[1] for r in rules), indexing="ij")
        nodes = np.column_stack([m.ravel() for m in mesh])
        weights = np.prod(np.stack([w.ravel() for w in wmesh]), axis=0)
        return nodes, self._weighted(nodes, weights)

    def bounding_box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """The domain box."""
        if self.box is None:
            return None
        return np.array([b[0] for b in self.box]), np.array([b[1] for b in self.box])

    def _clip(
        self, lo: NDArray[np.float64], hi: NDArray[np.float64],
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        if self.box is None:
            return lo.astype(float), hi.astype(float)
        blo = np.array([b[0] for b in self.box])
        bhi = np.array([b[1] for b in self.box])
        return np.maximum(lo, blo), np.minimum(hi, bhi)


class PointStratum(Stratum):
    """A Dirac atom of given mass."""

    kind = "point"
    sampled = False

    def __init__(self, point: t.Sequence[float], mass: float = 1.0, **kwargs: t.Any) -> None:
        """Initialize the atom."""
        self.point = np.asarray(point, dtype=float)
        if not mass > 0:
            msg = f"Dirac mass must be positive, got {mass}"
            raise InputError(msg)
        self.mass = float(mass)
        kwargs.setdefault("ahlfors_dim", 0.0)
        kwargs.setdefault("ahlfors_constants", (self.mass, self.mass))
        super().__init__(self.point.size, **kwargs)

    def parameters(self) -> dict[str, t.Any]:
        """Descriptor entries."""
        return {"point": self.point.tolist(), "mass": self.mass}

    def contains(self, x: NDArray[np.float64]) -> bool:
        """Whether ``x`` is the atom."""
        return _near(self.point, x)

    def bounding_box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """The atom itself."""
        return self.point.copy(), self.point.copy()

    def _hit(self, x: NDArray[np.float64], r: float) -> Rule:
        if np.linalg.norm(self.point - x) < r:
            return self.point[None, :].copy(), np.array([self.mass])
        return np.zeros((0, self.ambient_dim)), np.zeros(0)

    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        return self._hit(x, r)

    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        return self._hit(x, r)

    def geometric_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """The atom's mass when it lies in the open ball."""
        return self.mass if np.linalg.norm(self.point - x) < r else 0.0

    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        return self.point[None, :].copy(), np.array([self.mass])

    def region_rule(self, region: RegionSpec, order: int, breakpoints: t.Sequence[float]) -> Rule:
        """The atom, when inside the region."""
        if region.contains(self.point)[0]:
            return self.point[None, :].copy(), np.array([self.mass])
        return np.zeros((0, self.ambient_dim)), np.zeros(0)


class SegmentStratum(Stratum):
    """Arclength measure on a straight segment."""

    kind = "segment"

    def __init__(self, start: t.Sequence[float], end: t.Sequence[float], **kwargs: t.Any) -> None:
        """Initialize the segment."""
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        self.length = float(np.linalg.norm(self.end - self.start))
        if self.start.shape != self.end.shape or not self.length > 0:
            msg = f"Segment {start} -> {end} is degenerate"
            raise DomainError(msg)
        self.tangent = (self.end - self.start) / self.length
        kwargs.setdefault("ahlfors_dim", 1.0)
        super().__init__(self.start.size, **kwargs)

    def parameters(self) -> dict[str, t.Any]:
        """Descriptor entries."""
        return {"start": self.start.tolist(), "end": self.end.tolist()}

    def contains(self, x: NDArray[np.float64]) -> bool:
        """Distance to the segment below tolerance."""
        s = float(np.clip(np.dot(x - self.start, self.tangent), 0.0, self.length))
        return _near(self.start + s * self.tangent, x)

    def bounding_box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """Box spanned by the endpoints."""
        return np.minimum(self.start, self.end), np.maximum(self.start, self.end)

    def _param_window(self, x: NDArray[np.float64], r: float) -> tuple[float, float]:
        proj = float(np.dot(x - self.start, self.tangent))
        return max(0.0, proj - r), min(self.length, proj + r)

    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        nodes, weights, _ = quadrature.segment_rule(self.start, self.end, x, r, order)
        return nodes, weights

    def geometric_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Length of the chord inside the ball."""
        _, weights, _ = quadrature.segment_rule(self.start, self.end, x, r, 1)
        return float(np.sum(weights))

    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        lo, hi = self._param_window(x, r)
        if not hi > lo:
            return np.zeros((0, self.ambient_dim)), np.zeros(0)
        s = lo + (hi - lo) * rng.random(n)
        return self.start + s[:, None] * self.tangent, np.full(n, (hi - lo) / n)

    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        if region.sampling == "random":
            s = self.length * rng.random(resolution)
        else:
            s = (np.arange(resolution) + 0.5) * self.length / resolution
        return self.start + s[:, None] * self.tangent, np.full(resolution, self.length / resolution)

    def region_rule(self, region: RegionSpec, order: int, breakpoints: t.Sequence[float]) -> Rule:
        """Gauss rule on the part of the segment inside the region (slab clipping)."""
        lo, hi = 0.0, self.length
        for axis, (blo, bhi) in enumerate(region.bounds):
            d = self.tangent[axis]
            a = self.start[axis]
            if abs(d) < _TOL:
                if not blo <= a <= bhi:
                    return np.zeros((0, self.ambient_dim)), np.zeros(0)
                continue
            s1, s2 = sorted(((blo - a) / d, (bhi - a) / d))
            lo, hi = max(lo, s1), min(hi, s2)
        s, w = quadrature.interval_rule(lo, hi, order)
        nodes = self.start + s[:, None] * self.tangent
        return nodes, self._weighted(nodes, w)

    def directions(self, vertex: NDArray[np.float64]) -> list[NDArray[np.float64]]:
        """Tangent pointing into the segment from an endpoint."""
        if _near(vertex, self.start):
            return [self.tangent.copy()]
        if _near(vertex, self.end):
            return [-self.tangent]
        return []


class ArcStratum(Stratum):
    """Arclength measure on a full circle in the plane."""

    kind = "circle"

    def __init__(self, center: t.Sequence[float] = (0.0, 0.0), radius: float = 1.0, **kwargs: t.Any) -> None:
        """Initialize the circle."""
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        if self.center.size != 2 or not self.radius > 0:
            msg = f"Circle with centre {center} and radius {radius} is not supported"
            raise DomainError(msg)
        kwargs.setdefault("ahlfors_dim", 1.0)
        super().__init__(2, **kwargs)

    def parameters(self) -> dict[str, t.Any]:
        """Descriptor entries."""
        return {"center": self.center.tolist(), "radius": self.radius}

    def contains(self, x: NDArray[np.float64]) -> bool:
        """On the circle within tolerance."""
        return abs(float(np.linalg.norm(x - self.center)) - self.radius) <= _TOL * max(1.0, self.radius)

    def bounding_box(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        """Square circumscribing the circle."""
        return self.center - self.radius, self.center + self.radius

    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        nodes, weights, _ = quadrature.arc_rule(self.center, self.radius, x, r, order)
        return nodes, weights

    def geometric_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Arc length inside the ball."""
        _, weights, _ = quadrature.arc_rule(self.center, self.radius, x, r, 1)
        return float(np.sum(weights))

    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        psi = 2.0 * math.pi * rng.random(n)
        nodes = self.center + self.radius * np.column_stack([np.cos(psi), np.sin(psi)])
        return nodes, np.full(n, 2.0 * math.pi * self.radius / n)

    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        if region.sampling == "random":
            psi = 2.0 * math.pi * rng.random(resolution)
        else:
            psi = np.arange(resolution) * (2.0 * math.pi / resolution)
        nodes = self.center + self.radius * np.column_stack([np.cos(psi), np.sin(psi)])
        return nodes, np.full(resolution, 2.0 * math.pi * self.radius / resolution)

    def directions(self, vertex: NDArray[np.float64]) -> list[NDArray[np.float64]]:
        """Both unit tangents at a point of the circle."""
        if not self.contains(vertex):
            return []
        radial = (vertex - self.center) / self.radius
        tangent = np.array([-radial[1], radial[0]])
        return [tangent, -tangent]


class GraphCurveStratum(Stratum):
    """Arclength measure on the graph ``y = g(x)`` over ``[a, b]``."""

    kind = "graph"

    def __init__(self, function: str, interval: t.Sequence[float], **kwargs: t.Any) -> None:
        """Initialize the curve.

        Args:
            function: Expression of ``x``.
            interval: Parameter interval ``(a, b)``.
            kwargs: Passed to :class:`Stratum`.
        """
        self.function = function
        self.g = ExpressionField(function, ("x",))
        self.g_prime = ExpressionField(str(self.g._grad_exprs[0]), ("x",))  # noqa: SLF001
        self.a, self.b = (float(v) for v in interval)
        if not self.b > self.a:
            msg = f"Graph interval {interval} is empty"
            raise DomainError(msg)
        kwargs.setdefault("ahlfors_dim", 1.0)
        super().__init__(2, **kwargs)

    def parameters(self) -> dict[str, t.Any]:
        """Descriptor entries."""
        return {"function": self.function, "interval": [self.a, self.b]}

    def _curve(self, s: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        col = s[:, None]
        nodes = np.column_stack([s, self.g(col)])
        jac = np.sqrt(1.0 + self.g_prime(col) ** 2)
        return nodes, jac

    def contains(self, x: NDArray[np.float64]) -> bool:
        """On the graph within tolerance."""
        if not self.a - _TOL <= x[0] <= self.b + _TOL:
            return False
        return abs(self.g.value([float(x[0])]) - float(x[1])) <= 1e-10

    def _geometric_rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        lo, hi = max(self.a, x[0] - r), min(self.b, x[0] + r)
        if not hi > lo:
            return np.zeros((0, 2)), np.zeros(0)

        def gap(s: float) -> float:
            return (s - x[0]) ** 2 + (self.g.value([s]) - x[1]) ** 2 - r * r

        params: list[NDArray[np.float64]] = []
        weights: list[NDArray[np.float64]] = []
        for left, right in quadrature.sign_intervals(gap, lo, hi):
            s, w = quadrature.interval_rule(left, right, order)
            params.append(s)
            weights.append(w)
        if not params:
            return np.zeros((0, 2)), np.zeros(0)
        nodes, jac = self._curve(np.concatenate(params))
        return nodes, np.concatenate(weights) * jac

    def _geometric_samples(
        self,
        x: NDArray[np.float64],
        r: float,
        n: int,
        rng: np.random.Generator,
    ) -> Rule:
        lo, hi = max(self.a, x[0] - r), min(self.b, x[0] + r)
        if not hi > lo:
            return np.zeros((0, 2)), np.zeros(0)
        nodes, jac = self._curve(lo + (hi - lo) * rng.random(n))
        return nodes, jac * (hi - lo) / n

    def _geometric_grid(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        span = self.b - self.a
        if region.sampling == "random":
            s = self.a + span * rng.random(resolution)
        else:
            s = self.a + (np.arange(resolution) + 0.5) * span / resolution
        nodes, jac = self._curve(s)
        return nodes, jac * span / resolution

    def directions(self, vertex: NDArray[np.float64]) -> list[NDArray[np.float64]]:
        """Unit tangent pointing into the curve from an endpoint."""
        for end, sign in ((self.a, 1.0), (self.b, -1.0)):
            point = np.array([end, self.g.value([end])])
            if _near(point, vertex):
                tangent = sign * np.array([1.0, self.g_prime.value([end])])
                return [tangent / np.linalg.norm(tangent)]
        return []


STRATUM_KINDS: dict[str, type[Stratum]] = {
    cls.kind: cls for cls in (LebesgueStratum, PointStratum, SegmentStratum, ArcStratum, GraphCurveStratum)
}


def stratum_from_descriptor(desc: t.Mapping[str, t.Any]) -> Stratum:
    """Rebuild a stratum from :meth:`Stratum.descriptor` output."""
    params = dict(desc)
    kind = params.pop("kind", None)
    if kind not in STRATUM_KINDS:
        msg = f"Unknown stratum kind {kind!r}"
        raise InputError(msg)
    if "ahlfors_constants" in params and params["ahlfors_constants"] is not None:
        params["ahlfors_constants"] = tuple(params["ahlfors_constants"])
    if "vertex_dims" in params:
        params["vertex_dims"] = {tuple(k): v for k, v in params["vertex_dims"]}
    return STRATUM_KINDS[kind](**params)


@dataclasses.dataclass(frozen=True)
class AhlforsAudit:
    """Outcome of an Ahlfors-regularity spot check."""

    ok: bool
    min_ratio: float
    max_ratio: float
    violations: list[tuple[tuple[float, ...], float, float]]


def check_ahlfors(
    stratum: Stratum,
    points: t.Iterable[t.Sequence[float]],
    radii: t.Iterable[float],
    order: int = 32,
) -> AhlforsAudit:
    """Check ``c r^Q <= μ_j(B_r(x)) <= C r^Q`` on sampled centres and radii.

    Raises:
        MissingConstantsError: the stratum declares no (c, C).
    """
    if stratum.ahlfors_constants is None:
        msg = f"{stratum.kind} stratum declares no Ahlfors constants"
        raise MissingConstantsError(msg)
    c_low, c_high = stratum.ahlfors_constants
    ratios: list[float] = []
    violations = []
    radii = list(radii)
    for p in points:
        x = np.asarray(p, dtype=float)
        q = stratum.local_dim(x)
        for r in radii:
            _, weights = stratum.ball_rule(x, r, order)
            ratio = float(np.sum(weights)) / r**q
            ratios.append(ratio)
            if not c_low * (1 - 1e-9) <= ratio <= c_high * (1 + 1e-9):
                violations.append((tuple(x.tolist()), float(r), ratio))
    return AhlforsAudit(
        ok=not violations,
        min_ratio=min(ratios, default=math.nan),
        max_ratio=max(ratios, default=math.nan),
        violations=violations,
    )


class StrataIntegrator:
    """Ball integrals over a sum of strata.

    The quadrature backend doubles the Gauss order until two successive rules
    agree; the reported error is their difference. The Monte Carlo backend
    samples each stratum's parameter box with a fixed seed.
    """

    def __init__(
        self,
        strata: t.Sequence[Stratum],
        backend: str = "quadrature",
        seed: int = 0,
        base_order: int = 8,
    ) -> None:
        """Initialize the integrator."""
        if not strata:
            msg = "A space needs at least one stratum"
            raise DomainError(msg)
        if backend not in ("quadrature", "monte-carlo"):
            msg = f"Unknown integration backend {backend!r}"
            raise InputError(msg)
        self.strata = tuple(strata)
        self.method = backend
        self.seed = seed
        self.base_order = base_order

    def analytic_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Sum of closed-form stratum masses, None if any is unknown."""
        if self.method != "quadrature":
            return None
        total = 0.0
        for stratum in self.strata:
            mass = stratum.analytic_mass(x, r)
            if mass is None:
                return None
            total += mass
        return total

    def stratum_masses(self, x: NDArray[np.float64], r: float, order: int = 32) -> list[float]:
        """μ_j(B_r(x)) per stratum."""
        out = []
        for stratum in self.strata:
            exact = stratum.analytic_mass(x, r)
            out.append(exact if exact is not None else float(np.sum(stratum.ball_rule(x, r, order)[1])))
        return out

    def estimate(
        self,
        x: NDArray[np.float64],
        r: float,
        f: ScalarField | None,
        budget: EffortBudget,
    ) -> BallEstimate:
        """Mass and integral over B_r(x)."""
        reference = None if f is None else centre_reference(f, x)
        if self.method == "monte-carlo":
            return self._monte_carlo(x, r, f, reference, budget)
        breakpoints = () if f is None else f.breakpoints
        order = self.base_order
        coarse = self._sums(*self._rule(x, r, order, breakpoints), f, reference)
        while True:
            order *= 2
            nodes, weights = self._rule(x, r, order, breakpoints)
            fine = self._sums(nodes, weights, f, reference)
            err_int = abs(fine[1] - coarse[1])
            err_mass = abs(fine[0] - coarse[0])
            scale = max(1.0, abs(fine[1]), fine[0])
            if max(err_int, err_mass) <= budget.target_error * scale:
                break
            if 4 * len(weights) > budget.max_evals:
                logger.debug("ball rule at r=%.3g stopped by budget (err %.2g)", r, err_int)
                break
            logger.debug("refining ball rule at r=%.3g past order %d (err %.2g)", r, order, err_int)
            coarse = fine
        mass, integral, magnitude, deviation = fine
        avg_err = err_int / mass if mass > 0 else 0.0
        if deviation is not None and coarse[3] is not None:
            avg_err = abs(deviation - coarse[3])
        return BallEstimate(
            mass=mass,
            integral=integral,
            abs_error=err_int,
            method="quadrature",
            samples_used=len(weights),
            mass_error=err_mass,
            average_error=avg_err,
            magnitude=magnitude,
            reference=0.0 if reference is None else reference,
            deviation=deviation,
        )

    def _rule(
        self,
        x: NDArray[np.float64],
        r: float,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> Rule:
        parts = [s.ball_rule(x, r, order, breakpoints) for s in self.strata]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    @staticmethod
    def _sums(
        nodes: NDArray[np.float64],
        weights: NDArray[np.float64],
        f: ScalarField | None,
        reference: float | None,
    ) -> tuple[float, float, float, float | None]:
        mass = float(np.sum(weights))
        if f is None:
            return mass, 0.0, 1.0, None
        if len(weights) == 0 or not mass > 0:
            return mass, 0.0, 0.0, None
        values = evaluate_at_nodes(f, nodes, weights)
        weighted = weights * values
        magnitude = float(np.sum(np.abs(weighted))) / mass
        deviation = None
        if reference is not None:
            deviation = float(np.sum(weights * (values - reference))) / mass
        return mass, float(np.sum(weighted)), magnitude, deviation

    def _monte_carlo(
        self,
        x: NDArray[np.float64],
        r: float,
        f: ScalarField | None,
        reference: float | None,
        budget: EffortBudget,
    ) -> BallEstimate:
        rng = np.random.default_rng(self.seed)
        ref = 0.0 if reference is None else reference
        exact = [s for s in self.strata if not s.sampled]
        sampled = [s for s in self.strata if s.sampled]
        # exact part: mass, integral, |integral|, integral of (f - ref)
        fixed = np.zeros(4)
        for stratum in exact:
            nodes, weights = stratum.ball_rule(x, r, 1)
            values = _values(f, nodes, weights)
            fixed += (
                np.sum(weights),
                np.sum(weights * values),
                np.sum(np.abs(weights * values)),
                np.sum(weights * (values - ref)),
            )
        # per sampled stratum: sums of Z_m, Z_i, |Z_i|, Z_d, Z_m^2, Z_i^2, Z_d^2, Z_m*Z_d
        sums = np.zeros((len(sampled), 8))
        drawn = 0
        while sampled and drawn < budget.max_evals:
            batch = min(_MC_BATCH, budget.max_evals - drawn)
            for k, stratum in enumerate(sampled):
                nodes, weights = stratum.ball_samples(x, r, batch, rng)
                if len(weights) == 0:
                    continue
                values = _values(f, nodes, weights)
                z_m = weights * batch
                z_i = z_m * values
                z_d = z_m * (values - ref)
                sums[k] += (
                    np.sum(z_m),
                    np.sum(z_i),
                    np.sum(np.abs(z_i)),
                    np.sum(z_d),
                    np.sum(z_m**2),
                    np.sum(z_i**2),
                    np.sum(z_d**2),
                    np.sum(z_m * z_d),
                )
            drawn += batch
            if budget.mc_k * math.sqrt(_mean_variance(sums, 1, 5, drawn)) <= budget.target_error:
                break
        n = max(drawn, 1)
        mass, integral, magnitude, dev_int = fixed + np.sum(sums[:, :4], axis=0) / n
        var_m = _mean_variance(sums, 0, 4, n)
        var_i = _mean_variance(sums, 1, 5, n)
        var_d = _mean_variance(sums, 3, 6, n)
        cov_md = float(np.sum(sums[:, 7] - sums[:, 0] * sums[:, 3] / n)) / max(n - 1, 1) / n
        if not mass > 0:
            return BallEstimate(float(mass), float(integral), math.inf, "monte-carlo", drawn)
        deviation = float(dev_int / mass)
        var_avg = max(var_d - 2.0 * deviation * cov_md + deviation**2 * var_m, 0.0) / mass**2
        return BallEstimate(
            mass=float(mass),
            integral=float(integral),
            abs_error=budget.mc_k * math.sqrt(var_i),
            method="monte-carlo",
            samples_used=drawn,
            mass_error=budget.mc_k * math.sqrt(var_m),
            average_error=budget.mc_k * math.sqrt(var_avg),
            magnitude=float(magnitude / mass),
            reference=ref,
            deviation=None if reference is None else deviation,
        )

    def discretize(self, region: RegionSpec, resolution: int, rng: np.random.Generator) -> Rule:
        """Concatenated stratum atoms."""
        parts = [s.discretize(region, resolution, rng) for s in self.strata]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def region_rule(self, region: RegionSpec, order: int, breakpoints: t.Sequence[float]) -> Rule:
        """Concatenated stratum region rules."""
        parts = [s.region_rule(region, order, breakpoints) for s in self.strata]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def evaluate_at_nodes(
    f: ScalarField,
    nodes: NDArray[np.float64],
    weights: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Evaluate ``f`` and reject non-finite values at positive-weight nodes."""
    values = f(nodes) if len(nodes) else np.zeros(0)
    bad = ~np.isfinite(values) & (weights != 0)
    if np.any(bad):
        node = nodes[int(np.argmax(bad))]
        msg = f"Field {f.name} is not finite at node {tuple(node.tolist())}"
        raise FieldEvaluationError(msg, node)
    return np.where(weights != 0, values, 0.0)


def centre_reference(f: ScalarField, x: NDArray[np.float64]) -> float | None:
    """``f(x)`` when finite, otherwise None (the caller then uses no shift)."""
    value = float(f(x[None, :])[0])
    return value if math.isfinite(value) else None


def _values(
    f: ScalarField | None,
    nodes: NDArray[np.float64],
    weights: NDArray[np.float64],
) -> NDArray[np.float64]:
    if f is None:
        return np.ones(len(weights))
    return evaluate_at_nodes(f, nodes, weights)


def _mean_variance(sums: NDArray[np.float64], first: int, second: int, n: int) -> float:
    """Variance of the sample mean from running sums of Z and Z^2."""
    if n < 2 or len(sums) == 0:
        return 0.0
    var = np.sum(sums[:, second] - sums[:, first] ** 2 / n) / (n - 1) / n
    return max(float(var), 0.0)
