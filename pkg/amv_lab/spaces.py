"""Concrete metric measure spaces.

Each constructor returns an immutable :class:`~amv_lab.core.SpaceHandle` whose
``descriptor`` is plain JSON; :func:`space_from_descriptor` rebuilds an equal
space from it.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import typing as t

import numpy as np

from amv_lab.core import EuclideanMetric, NormConstants, SpaceHandle
from amv_lab.exceptions import DomainError, InputError
from amv_lab.fields import field_from_spec
from amv_lab.heisenberg import CCMetric, HeisenbergMonteCarlo, cc_distance
from amv_lab.strata import (
    COORDINATES,
    UNIT_BALL_VOLUME,
    ArcStratum,
    GraphCurveStratum,
    LebesgueStratum,
    PointStratum,
    SegmentStratum,
    StrataIntegrator,
    Stratum,
    stratum_from_descriptor,
)

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    from amv_lab.fields import ExpressionField

__all__ = [
    "SubmanifoldSpec",
    "WeightSpec",
    "cc_distance",
    "embedded_submanifold",
    "euclidean_lebesgue",
    "heisenberg_cc",
    "lebesgue_plus_dirac",
    "space_from_descriptor",
    "stratified_complex",
    "stratum_weights",
    "weighted_lebesgue",
]

logger = logging.getLogger(__name__)

REGULARITY = ("C1", "measurable")
_DENSITY_SAMPLES = 4096


@dataclasses.dataclass(frozen=True)
class WeightSpec:
    """A density ``w >= 0`` for weighted Lebesgue measure.

    Attributes:
        density: Named field or expression in the chart coordinates.
        zero_set_hint: Free-text description of ``{w = 0}``.
        regularity: ``"C1"`` or ``"measurable"``.
    """

    density: str
    zero_set_hint: str | None = None
    regularity: str = "C1"

    def __post_init__(self) -> None:
        """Validate the regularity tag."""
        if self.regularity not in REGULARITY:
            msg = f"Regularity must be one of {REGULARITY}, got {self.regularity!r}"
            raise InputError(msg)

    def field(self, n: int) -> ExpressionField:
        """The density as a field on R^n."""
        return field_from_spec(self.density, COORDINATES[:n])


def _check_nonnegative(
    w: ExpressionField,
    n: int,
    box: t.Sequence[t.Sequence[float]] | None,
    seed: int,
) -> None:
    """Reject a density that is negative at a sample point."""
    rng = np.random.default_rng(seed)
    if box is None:
        lo, hi = np.full(n, -2.0), np.full(n, 2.0)
    else:
        lo = np.array([b[0] for b in box], dtype=float)
        hi = np.array([b[1] for b in box], dtype=float)
    samples = lo + (hi - lo) * rng.random((_DENSITY_SAMPLES, n))
    values = w(samples)
    bad = values < 0.0
    if np.any(bad):
        where = samples[int(np.argmax(bad))]
        msg = f"Density {w.name} is negative at {tuple(where.tolist())}"
        raise DomainError(msg)


def _lebesgue_constants(n: int, box: t.Sequence[t.Sequence[float]] | None) -> NormConstants:
    if box is None:
        return NormConstants(uniform=True, ahlfors=(UNIT_BALL_VOLUME[n], UNIT_BALL_VOLUME[n]))
    # a ball centred in a box keeps at least a 2^-n share of itself for small r
    return NormConstants(ahlfors=(UNIT_BALL_VOLUME[n] / 2**n, UNIT_BALL_VOLUME[n]))


def _strata_space(
    kind: str,
    dim: int,
    strata: t.Sequence[Stratum],
    descriptor: dict[str, t.Any],
    backend: str,
    seed: int,
    norm_constants: NormConstants,
) -> SpaceHandle:
    strata = tuple(strata)
    integrator = StrataIntegrator(strata, backend=backend, seed=seed)
    lebesgue_everywhere = any(isinstance(s, LebesgueStratum) and s.box is None for s in strata)

    def support_test(x: NDArray[np.float64]) -> bool:
        return lebesgue_everywhere or any(s.contains(x) for s in strata)

    descriptor = {"kind": kind, **descriptor, "backend": backend, "seed": seed}
    logger.debug("Built %s space from %d strata (%s backend)", kind, len(strata), backend)
    return SpaceHandle(
        ambient_dim=dim,
        metric=EuclideanMetric(),
        integrator=integrator,
        support_test=support_test,
        descriptor=descriptor,
        coordinate_names=COORDINATES[:dim],
        norm_constants=norm_constants,
        strata=strata,
    )


def euclidean_lebesgue(
    n: int,
    backend: str = "quadrature",
    seed: int = 0,
    box: t.Sequence[t.Sequence[float]] | None = None,
) -> SpaceHandle:
    """``(R^n, d_e, L^n)``, optionally restricted to a box (n <= 2).

    Ball masses are closed form; ball integrals use Gauss rules.
    """
    stratum = LebesgueStratum(n, box=box)
    return _strata_space(
        "euclidean",
        n,
        [stratum],
        {"n": n, "box": stratum.parameters()["box"]},
        backend,
        seed,
        _lebesgue_constants(n, box),
    )


def weighted_lebesgue(
    n: int,
    w: WeightSpec | str,
    backend: str = "quadrature",
    seed: int = 0,
    box: t.Sequence[t.Sequence[float]] | None = None,
) -> SpaceHandle:
    """``(Ω, d_e, w L^n)``.

    Raises:
        DomainError: ``w`` is negative at a sampled point.
    """
    spec = WeightSpec(w) if isinstance(w, str) else w
    _check_nonnegative(spec.field(n), n, box, seed)
    stratum = LebesgueStratum(n, density=spec.density, box=box)
    descriptor = {
        "n": n,
        "density": spec.density,
        "zero_set_hint": spec.zero_set_hint,
        "regularity": spec.regularity,
        "box": stratum.parameters()["box"],
    }
    return _strata_space("weighted", n, [stratum], descriptor, backend, seed, NormConstants())


def lebesgue_plus_dirac(
    n: int,
    mass: float = 1.0,
    backend: str = "quadrature",
    seed: int = 0,
) -> SpaceHandle:
    """``(R^n, d_e, L^n + m δ_o)``."""
    strata = [LebesgueStratum(n), PointStratum(np.zeros(n), mass=mass)]
    return _strata_space("dirac", n, strata, {"n": n, "mass": float(mass)}, backend, seed, NormConstants())


def heisenberg_cc(seed: int = 0, batch_size: int = 100_000) -> SpaceHandle:
    """``(R^3, d_CC, L^3)`` with a seeded rejection-sampling ball backend."""
    return SpaceHandle(
        ambient_dim=3,
        metric=CCMetric(),
        integrator=HeisenbergMonteCarlo(seed, batch_size=batch_size),
        support_test=lambda _x: True,
        descriptor={"kind": "heisenberg", "seed": int(seed), "batch_size": int(batch_size)},
        coordinate_names=("x", "y", "t"),
        # Haar measure: every ball of radius r has the same mass
        norm_constants=NormConstants(uniform=True),
    )


def stratified_complex(
    strata: t.Sequence[Stratum],
    backend: str = "quadrature",
    seed: int = 0,
    norm_constants: NormConstants | None = None,
) -> SpaceHandle:
    """``μ = Σ μ_j`` over the given strata.

    Raises:
        DomainError: no strata, or strata in different ambient dimensions.
    """
    if not strata:
        msg = "A stratified complex needs at least one stratum"
        raise DomainError(msg)
    dims = {s.ambient_dim for s in strata}
    if len(dims) != 1:
        msg = f"Strata live in different ambient dimensions: {sorted(dims)}"
        raise DomainError(msg)
    norm_constants = norm_constants or NormConstants()
    descriptor = {"strata": [s.descriptor() for s in strata], "norm_constants": norm_constants.as_dict()}
    return _strata_space(
        "stratified",
        dims.pop(),
        strata,
        descriptor,
        backend,
        seed,
        norm_constants,
    )


@dataclasses.dataclass(frozen=True)
class SubmanifoldSpec:
    """An embedded curve carrying its arclength measure.

    Attributes:
        kind: ``circle``, ``segment`` or ``graph``.
        params: Keyword arguments of the matching stratum.
        intrinsic_dim: Dimension m of the submanifold.
        second_fundamental: ``‖II‖`` at the points of interest, when constant.
        mean_curvature: ``‖H‖`` at the points of interest, when constant.
        scalar_curvature: Scalar curvature R of the induced metric.
    """

    kind: str
    params: dict[str, t.Any] = dataclasses.field(default_factory=dict)
    intrinsic_dim: int = 1
    second_fundamental: float | None = None
    mean_curvature: float | None = None
    scalar_curvature: float = 0.0

    KINDS: t.ClassVar[dict[str, type[Stratum]]] = {
        "circle": ArcStratum,
        "segment": SegmentStratum,
        "graph": GraphCurveStratum,
    }

    def __post_init__(self) -> None:
        """Validate the kind and fill curvature of circles and segments."""
        if self.kind not in self.KINDS:
            msg = f"Unsupported submanifold kind {self.kind!r}"
            raise InputError(msg)
        if self.intrinsic_dim != 1:
            msg = "Only curves (m = 1) are supported"
            raise InputError(msg)
        if self.second_fundamental is None:
            if self.kind == "circle":
                curvature = 1.0 / float(self.params.get("radius", 1.0)) ** 2
                object.__setattr__(self, "second_fundamental", curvature)
                object.__setattr__(self, "mean_curvature", curvature)
            elif self.kind == "segment":
                object.__setattr__(self, "second_fundamental", 0.0)
                object.__setattr__(self, "mean_curvature", 0.0)

    def stratum(self) -> Stratum:
        """The arclength stratum."""
        return self.KINDS[self.kind](**self.params)

    @property
    def extrinsic_mass_coefficient(self) -> float | None:
        """``k`` in ``H^m(B_r(x) ∩ M) = ω_m r^m (1 + k r² + O(r³))``."""
        if self.second_fundamental is None or self.mean_curvature is None:
            return None
        m = self.intrinsic_dim
        return (2.0 * self.second_fundamental - self.mean_curvature) / (8.0 * (m + 2))

    def extrinsic_mass(self, r: float) -> float | None:
        """Second-order expansion of the extrinsic ball mass."""
        k = self.extrinsic_mass_coefficient
        if k is None:
            return None
        return UNIT_BALL_VOLUME[self.intrinsic_dim] * r**self.intrinsic_dim * (1.0 + k * r * r)

    def intrinsic_mass(self, r: float) -> float:
        """Second-order expansion of the geodesic ball mass."""
        m = self.intrinsic_dim
        return UNIT_BALL_VOLUME[m] * r**m * (1.0 - self.scalar_curvature * r * r / (6.0 * (m + 2)))

    def as_dict(self) -> dict[str, t.Any]:
        """Descriptor representation."""
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "intrinsic_dim": self.intrinsic_dim,
            "second_fundamental": self.second_fundamental,
            "mean_curvature": self.mean_curvature,
            "scalar_curvature": self.scalar_curvature,
        }


def embedded_submanifold(
    spec: SubmanifoldSpec,
    backend: str = "quadrature",
    seed: int = 0,
) -> SpaceHandle:
    """``(R^n, d_e, H^m ⌞ M)`` with extrinsic Euclidean balls."""
    stratum = spec.stratum()
    # closed curves have the same arc in every ball of a given radius
    constants = NormConstants(uniform=spec.kind == "circle", ahlfors=(1.0, math.pi) if spec.kind == "circle" else None)
    return _strata_space(
        "submanifold",
        stratum.ambient_dim,
        [stratum],
        {"submanifold": spec.as_dict()},
        backend,
        seed,
        constants,
    )


def stratum_weights(
    space: SpaceHandle,
    x: t.Sequence[float],
    radii: t.Sequence[float],
    order: int = 32,
) -> NDArray[np.float64]:
    """``μ_i(B_r(x)) / μ(B_r(x))`` per radius (rows) and stratum (columns).

    The last row approximates the stratum weights ``α_i(x)``.
    """
    if not space.strata:
        msg = f"Space {space.kind} has no strata"
        raise DomainError(msg)
    xa = space.point(x)
    integrator = space.integrator
    if not isinstance(integrator, StrataIntegrator):
        msg = f"Space {space.kind} does not integrate over strata"
        raise DomainError(msg)
    rows = []
    for r in radii:
        masses = np.asarray(integrator.stratum_masses(xa, float(r), order))
        total = float(np.sum(masses))
        if not total > 0:
            msg = f"Ball B_{r}({tuple(xa)}) has zero mass"
            raise DomainError(msg)
        rows.append(masses / total)
    return np.vstack(rows)


def space_from_descriptor(desc: t.Mapping[str, t.Any]) -> SpaceHandle:
    """Rebuild a space from its descriptor.

    Raises:
        InputError: unknown kind.
    """
    kind = desc.get("kind")
    backend = desc.get("backend", "quadrature")
    seed = int(desc.get("seed", 0) or 0)
    if kind == "euclidean":
        return euclidean_lebesgue(int(desc["n"]), backend=backend, seed=seed, box=desc.get("box"))
    if kind == "weighted":
        weight = WeightSpec(
            desc["density"],
            zero_set_hint=desc.get("zero_set_hint"),
            regularity=desc.get("regularity", "C1"),
        )
        return weighted_lebesgue(int(desc["n"]), weight, backend=backend, seed=seed, box=desc.get("box"))
    if kind == "dirac":
        return lebesgue_plus_dirac(int(desc["n"]), mass=float(desc.get("mass", 1.0)), backend=backend, seed=seed)
    if kind == "heisenberg":
        return heisenberg_cc(seed=seed, batch_size=int(desc.get("batch_size", 100_000)))
    if kind == "stratified":
        strata = [stratum_from_descriptor(s) for s in desc["strata"]]
        constants = desc.get("norm_constants") or {}
        norm_constants = NormConstants(
            uniform=bool(constants.get("uniform", False)),
            ahlfors=None if constants.get("ahlfors") is None else tuple(constants["ahlfors"]),
            doubling=constants.get("doubling"),
        )
        return stratified_complex(strata, backend=backend, seed=seed, norm_constants=norm_constants)
    if kind == "submanifold":
        spec = SubmanifoldSpec(**desc["submanifold"])
        return embedded_submanifold(spec, backend=backend, seed=seed)
    msg = f"Unknown space kind {kind!r}"
    raise InputError(msg)


def example_complex(variant: int = 1) -> SpaceHandle:
    """The segment-plus-square complex meeting at the origin.

    ``L = [0, 1] × {0}`` carries ``x^(variant - 1) dx`` and
    ``S = [-1, 0] × [-1/2, 1/2]`` carries area. At o the segment is locally
    ``variant``-dimensional while the square is 2-dimensional.
    """
    if variant not in (1, 2, 3):
        msg = f"Example complex variant must be 1, 2 or 3, got {variant}"
        raise InputError(msg)
    density = {1: None, 2: "x", 3: "x^2"}[variant]
    vertex_dims = None if variant == 1 else {(0.0, 0.0): float(variant)}
    strata: list[Stratum] = [
        SegmentStratum(
            (0.0, 0.0),
            (1.0, 0.0),
            density=density,
            ahlfors_constants=(1.0, 2.0) if variant == 1 else None,
            vertex_dims=vertex_dims,
        ),
        LebesgueStratum(2, box=((-1.0, 0.0), (-0.5, 0.5)), ahlfors_constants=(math.pi / 4.0, math.pi)),
    ]
    return stratified_complex(strata)


def ray_star(angles_deg: t.Sequence[float], length: float = 1.0) -> SpaceHandle:
    """Segments of arclength measure leaving o at the given angles."""
    strata = []
    for angle in angles_deg:
        a = math.radians(angle)
        end = (length * math.cos(a), length * math.sin(a))
        strata.append(SegmentStratum((0.0, 0.0), end, ahlfors_constants=(1.0, 2.0)))
    return stratified_complex(strata, norm_constants=NormConstants(ahlfors=(1.0, float(len(strata)))))
