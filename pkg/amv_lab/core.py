"""Metric measure space abstraction: distances, ball masses, ball integrals."""

from __future__ import annotations

import dataclasses
import logging
import math
import typing as t

import numpy as np
from scipy.spatial import cKDTree

from amv_lab.exceptions import DomainError, InputError

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    from amv_lab.fields import ScalarField

logger = logging.getLogger(__name__)

METHODS = ("analytic", "quadrature", "monte-carlo")


@dataclasses.dataclass(frozen=True)
class Point:
    """A point of the ambient chart."""

    coords: tuple[float, ...]
    chart_id: str = "R^n"

    def __post_init__(self) -> None:
        """Validate coordinates."""
        coords = tuple(float(c) for c in self.coords)
        if not coords or not all(math.isfinite(c) for c in coords):
            msg = f"Point coordinates must be finite, got {self.coords!r}"
            raise InputError(msg)
        object.__setattr__(self, "coords", coords)

    @property
    def array(self) -> NDArray[np.float64]:
        """Coordinates as a float array."""
        return np.asarray(self.coords, dtype=float)

    @classmethod
    def of(cls, value: Point | t.Sequence[float] | NDArray[np.float64]) -> Point:
        """Coerce a sequence to a :class:`Point`."""
        if isinstance(value, Point):
            return value
        return cls(tuple(np.atleast_1d(np.asarray(value, dtype=float)).tolist()))


@dataclasses.dataclass(frozen=True)
class EffortBudget:
    """Work limits for one ball integral.

    Quadrature doubles its order until two successive rules agree to
    ``target_error`` (relative to the integral's size) or ``max_evals`` nodes
    are used. Monte Carlo stops at whichever of the two comes first.
    """

    max_evals: int = 2_000_000
    target_error: float = 1e-13
    mc_k: float = 3.0

    def __post_init__(self) -> None:
        """Validate the budget."""
        if self.max_evals <= 0 or not self.target_error > 0 or not self.mc_k > 0:
            msg = f"Budget entries must be positive: {self!r}"
            raise InputError(msg)


@dataclasses.dataclass(frozen=True)
class BallEstimate:
    """Mass and integral over one ball, from a single node set.

    ``deviation`` is the ball average of ``f - reference`` where ``reference``
    is ``f`` at the centre (or at the first node when that is not finite); it
    keeps averages of constants exact.
    """

    mass: float
    integral: float
    abs_error: float
    method: str
    samples_used: int
    mass_error: float = 0.0
    average_error: float = 0.0
    magnitude: float = 0.0
    reference: float = 0.0
    deviation: float | None = None

    @property
    def average(self) -> float:
        """Ball average of the integrand."""
        if self.deviation is None:
            return self.integral / self.mass
        return self.reference + self.deviation


@dataclasses.dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned box to discretize, with a sampling mode (grid or random)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    sampling: str = "grid"

    def __post_init__(self) -> None:
        """Validate the box."""
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper):
            msg = "Region bounds have different dimensions"
            raise InputError(msg)
        if self.sampling not in ("grid", "random"):
            msg = f"Unknown sampling mode {self.sampling!r}"
            raise InputError(msg)

    @property
    def dim(self) -> int:
        """Dimension of the box."""
        return len(self.lower)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        """Per-axis (low, high) pairs."""
        return list(zip(self.lower, self.upper))

    def contains(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        """Closed-box membership for an ``(N, n)`` array."""
        pts = np.atleast_2d(points)
        return np.all((pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper)), axis=1)

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {"lower": list(self.lower), "upper": list(self.upper), "sampling": self.sampling}


@dataclasses.dataclass(frozen=True)
class NormConstants:
    """Measure constants that bound averaging operators."""

    uniform: bool = False
    ahlfors: tuple[float, float] | None = None
    doubling: float | None = None

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {
            "uniform": self.uniform,
            "ahlfors": None if self.ahlfors is None else list(self.ahlfors),
            "doubling": self.doubling,
        }


class Metric(t.Protocol):
    """Distance oracle."""

    name: str

    def distance(self, p: NDArray[np.float64], q: NDArray[np.float64]) -> float:
        """d(p, q)."""

    def distances(self, p: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
        """d(p, q_i) for every row q_i."""

    def neighbors(
        self,
        points: NDArray[np.float64],
        r: float,
    ) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        """Index pairs (i, j), i included, with d(x_i, x_j) < r, sorted by (i, j)."""


class EuclideanMetric:
    """Euclidean distance, with KD-tree neighbour search."""

    name = "euclidean"

    def distance(self, p: NDArray[np.float64], q: NDArray[np.float64]) -> float:
        """Euclidean distance."""
        return float(np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)))

    def distances(self, p: NDArray[np.float64], points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Distances from ``p`` to each row of ``points``."""
        return np.linalg.norm(np.atleast_2d(points) - np.asarray(p, dtype=float), axis=1)

    def neighbors(
        self,
        points: NDArray[np.float64],
        r: float,
    ) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        """Strict-inequality neighbour pairs."""
        tree = cKDTree(points)
        candidates = tree.query_ball_point(points, r, return_sorted=True)
        rows = np.repeat(np.arange(len(points)), [len(c) for c in candidates])
        cols = np.fromiter((j for c in candidates for j in c), dtype=np.int64, count=len(rows))
        dist = np.linalg.norm(points[rows] - points[cols], axis=1)
        keep = dist < r
        return rows[keep].astype(np.int64), cols[keep]


class BallIntegrator(t.Protocol):
    """Ball-integration backend of a space."""

    method: str

    def estimate(
        self,
        x: NDArray[np.float64],
        r: float,
        f: ScalarField | None,
        budget: EffortBudget,
    ) -> BallEstimate:
        """Mass and (when ``f`` is given) integral over B_r(x)."""

    def analytic_mass(self, x: NDArray[np.float64], r: float) -> float | None:
        """Closed-form mass, if known."""

    def discretize(
        self,
        region: RegionSpec,
        resolution: int,
        rng: np.random.Generator,
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Atoms and weights approximating the measure on ``region``."""

    def region_rule(
        self,
        region: RegionSpec,
        order: int,
        breakpoints: t.Sequence[float],
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Quadrature for ``∫_region g dμ``."""


@dataclasses.dataclass(frozen=True, eq=False)
class SpaceHandle:
    """A metric measure space (X, d, μ), immutable after construction."""

    ambient_dim: int
    metric: Metric
    integrator: BallIntegrator
    support_test: t.Callable[[NDArray[np.float64]], bool]
    descriptor: dict[str, t.Any]
    coordinate_names: tuple[str, ...]
    norm_constants: NormConstants = NormConstants()
    strata: tuple[t.Any, ...] = ()

    def __eq__(self, other: object) -> bool:
        """Spaces compare equal when their descriptors do."""
        return isinstance(other, SpaceHandle) and self.descriptor == other.descriptor

    def __hash__(self) -> int:
        """Hash of the descriptor kind."""
        return hash(self.descriptor.get("kind"))

    @property
    def kind(self) -> str:
        """Descriptor kind."""
        return str(self.descriptor["kind"])

    def point(self, value: Point | t.Sequence[float]) -> NDArray[np.float64]:
        """Validate ``value`` against the chart and return its coordinates."""
        pt = Point.of(value)
        if len(pt.coords) != self.ambient_dim:
            msg = (
                f"Point {pt.coords} has {len(pt.coords)} coordinates, "
                f"space {self.kind} needs {self.ambient_dim}"
            )
            raise InputError(msg)
        return pt.array


@dataclasses.dataclass(frozen=True, eq=False)
class AtomCloud:
    """Finite weighted discretization of a region of a space."""

    points: NDArray[np.float64]
    weights: NDArray[np.float64]
    region: RegionSpec
    source_space: dict[str, t.Any]
    metric: Metric
    seed: int | None = None
    norm_constants: NormConstants = NormConstants()

    def __post_init__(self) -> None:
        """Freeze arrays and check weights."""
        points = np.array(np.atleast_2d(self.points), dtype=float)
        weights = np.array(self.weights, dtype=float).ravel()
        if len(points) != len(weights):
            msg = "Cloud points and weights differ in length"
            raise InputError(msg)
        if not np.all(weights > 0):
            bad = int(np.argmin(weights))
            msg = f"Atom {bad} has non-positive weight {weights[bad]}"
            raise DomainError(msg)
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        """Number of atoms."""
        return len(self.weights)

    @property
    def atoms(self) -> list[tuple[Point, float]]:
        """(Point, weight) pairs."""
        return [(Point(tuple(p)), float(w)) for p, w in zip(self.points.tolist(), self.weights)]

    @property
    def total_weight(self) -> float:
        """Sum of weights."""
        return float(np.sum(self.weights))

    def evaluate(self, field: ScalarField) -> NDArray[np.float64]:
        """Field values at the atoms."""
        return field(self.points)

    def subset(self, index: t.Sequence[int] | NDArray[np.int64]) -> AtomCloud:
        """Cloud restricted to ``index``."""
        idx = np.asarray(index, dtype=np.int64)
        return dataclasses.replace(self, points=self.points[idx], weights=self.weights[idx])


def distance(space: SpaceHandle, p: Point | t.Sequence[float], q: Point | t.Sequence[float]) -> float:
    """d(p, q) in ``space``."""
    return space.metric.distance(space.point(p), space.point(q))


def _check_support(space: SpaceHandle, x: NDArray[np.float64], r: float) -> None:
    if not r > 0 or not math.isfinite(r):
        msg = f"Radius must be positive and finite, got {r}"
        raise InputError(msg)
    if not space.support_test(x):
        msg = f"Point {tuple(x)} is outside the support of {space.kind}"
        raise DomainError(msg)


def ball_mass(
    space: SpaceHandle,
    x: Point | t.Sequence[float],
    r: float,
    budget: EffortBudget | None = None,
) -> BallEstimate:
    """μ(B_r(x)); closed form when the backend has one.

    Raises:
        DomainError: ``x`` outside the support.
    """
    budget = budget or EffortBudget()
    xa = space.point(x)
    _check_support(space, xa, r)
    exact = space.integrator.analytic_mass(xa, r)
    if exact is not None:
        return BallEstimate(
            mass=exact,
            integral=0.0,
            abs_error=0.0,
            method="analytic",
            samples_used=0,
        )
    est = space.integrator.estimate(xa, r, None, budget)
    return dataclasses.replace(est, integral=0.0)


def ball_integrate(
    space: SpaceHandle,
    x: Point | t.Sequence[float],
    r: float,
    f: ScalarField,
    budget: EffortBudget | None = None,
) -> BallEstimate:
    """Mass and ``∫_{B_r(x)} f dμ`` from one node set.

    Raises:
        DomainError: ``x`` outside the support or a zero ball mass.
        FieldEvaluationError: ``f`` is not finite at a positive-weight node.
    """
    budget = budget or EffortBudget()
    xa = space.point(x)
    _check_support(space, xa, r)
    if f.dim != space.ambient_dim:
        msg = f"Field {f.name} has dimension {f.dim}, space needs {space.ambient_dim}"
        raise InputError(msg)
    est = space.integrator.estimate(xa, r, f, budget)
    if not est.mass > 0:
        msg = f"Ball B_{r}({tuple(xa)}) has zero mass in {space.kind}"
        raise DomainError(msg)
    logger.debug(
        "ball %s r=%.3g mass=%.6g integral=%.6g err=%.2g (%s, %d nodes)",
        tuple(xa),
        r,
        est.mass,
        est.integral,
        est.abs_error,
        est.method,
        est.samples_used,
    )
    return est


def _cloud_constants(space: SpaceHandle, region: RegionSpec) -> NormConstants:
    """Norm constants of the measure restricted to ``region``.

    Uniformity survives only when every stratum lies inside the region; a
    clipped n-dimensional support keeps at least a ``2^-n`` share of small
    balls, which lowers the Ahlfors constant c accordingly.
    """
    constants = space.norm_constants
    boxes = [s.bounding_box() for s in space.strata]
    inside = bool(boxes) and all(
        box is not None and bool(region.contains(box[0])[0]) and bool(region.contains(box[1])[0]) for box in boxes
    )
    if inside:
        return constants
    ahlfors = constants.ahlfors
    if ahlfors is not None:
        ahlfors = (ahlfors[0] / 2**space.ambient_dim, ahlfors[1])
    return NormConstants(uniform=False, ahlfors=ahlfors, doubling=constants.doubling)


def make_atom_cloud(
    space: SpaceHandle,
    region: RegionSpec,
    resolution: int,
    seed: int = 0,
) -> AtomCloud:
    """Discretize ``space`` on ``region``.

    Grid sampling uses midpoint cells (weight = density x cell volume); Dirac
    atoms are carried with their exact mass.

    Raises:
        DomainError: the region holds no mass of the space.
    """
    if region.dim != space.ambient_dim:
        msg = f"Region dimension {region.dim} does not match space dimension {space.ambient_dim}"
        raise InputError(msg)
    if resolution <= 0:
        msg = f"Resolution must be positive, got {resolution}"
        raise InputError(msg)
    if any(hi <= lo for lo, hi in region.bounds):
        msg = f"Region {region.bounds} is empty"
        raise DomainError(msg)
    rng = np.random.default_rng(seed)
    points, weights = space.integrator.discretize(region, resolution, rng)
    keep = weights > 0
    if not np.any(keep):
        msg = f"Region {region.bounds} carries no mass of {space.kind}"
        raise DomainError(msg)
    logger.info("Built atom cloud: %d atoms, total weight %.6g", int(keep.sum()), weights[keep].sum())
    return AtomCloud(
        points=points[keep],
        weights=weights[keep],
        region=region,
        source_space=space.descriptor,
        metric=space.metric,
        seed=seed if region.sampling == "random" else None,
        norm_constants=_cloud_constants(space, region),
    )
