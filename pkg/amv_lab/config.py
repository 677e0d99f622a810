"""Experiment and cloud configuration: JSON documents validated against a schema."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
import typing as t
from pathlib import Path

import jsonschema
import numpy as np
from singer_sdk import typing as th

from amv_lab.core import EffortBudget, RegionSpec, make_atom_cloud
from amv_lab.estimator import ConvergenceSettings, RadiusSchedule
from amv_lab.exceptions import AmvLabError, ConfigError, FieldExpressionError
from amv_lab.fields import ExpressionField, field_from_spec
from amv_lab.spaces import example_complex, ray_star, space_from_descriptor

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    from amv_lab.core import AtomCloud, SpaceHandle

logger = logging.getLogger(__name__)

THREADS_ENV = "AMV_THREADS"
OUTPUT_FORMATS = ("csv", "json")
SPACE_KINDS = (
    "euclidean",
    "weighted",
    "dirac",
    "heisenberg",
    "stratified",
    "submanifold",
    "example_complex",
    "rays",
)

SPACE_SCHEMA = th.ObjectType(
    th.Property(
        "kind",
        th.StringType,
        required=True,
        allowed_values=list(SPACE_KINDS),
        description="Space family; the remaining keys are its parameters.",
    ),
    th.Property(
        "backend",
        th.StringType,
        allowed_values=["quadrature", "monte-carlo"],
        description="Ball integration backend of strata spaces.",
    ),
    additional_properties=True,
)

OUTPUT_SCHEMA = th.ObjectType(
    th.Property("path", th.StringType, description="Report file; stdout when omitted."),
    th.Property(
        "format",
        th.StringType,
        default="csv",
        allowed_values=list(OUTPUT_FORMATS),
        description="Report format.",
    ),
)

EXPERIMENT_SCHEMA = th.PropertiesList(
    th.Property("space", SPACE_SCHEMA, required=True, description="Space descriptor."),
    th.Property(
        "field",
        th.StringType,
        required=True,
        description="Named built-in field or an expression in the space's coordinates.",
        examples=["bose", "x^2 - 3*x*y + y^2"],
    ),
    th.Property(
        "points",
        th.ArrayType(th.ArrayType(th.NumberType)),
        required=True,
        description="Evaluation points.",
    ),
    th.Property(
        "schedule",
        th.ObjectType(
            th.Property("r0", th.NumberType, default=0.5, description="Largest radius."),
            th.Property("ratio", th.NumberType, default=0.7, description="Geometric ratio in (0, 1)."),
            th.Property("count", th.IntegerType, default=12, description="Number of radii (>= 4)."),
        ),
        default={},
        description="Radius schedule r0 * ratio**k.",
    ),
    th.Property(
        "budget",
        th.ObjectType(
            th.Property("max_evals", th.IntegerType, default=2_000_000),
            th.Property("target_error", th.NumberType, default=1e-13),
            th.Property(
                "mc_k",
                th.NumberType,
                default=3.0,
                description="Monte Carlo error bars are mc_k standard errors.",
            ),
        ),
        default={},
        description="Work limits of one ball integral.",
    ),
    th.Property(
        "convergence",
        th.ObjectType(
            th.Property("relative_floor", th.NumberType, default=1e-10),
            th.Property("alpha_min", th.NumberType, default=0.5),
            th.Property("r2_min", th.NumberType, default=0.99),
            th.Property("stability", th.NumberType, default=1e-6),
        ),
        default={},
        description="Trace classification thresholds.",
    ),
    th.Property("seed", th.IntegerType, description="Seed; mandatory for Monte Carlo backends."),
    th.Property("output", OUTPUT_SCHEMA, default={}, description="Where and how to write the report."),
).to_dict()

CLOUD_SCHEMA = th.PropertiesList(
    th.Property("space", SPACE_SCHEMA, required=True, description="Space descriptor."),
    th.Property(
        "region",
        th.ObjectType(
            th.Property("lower", th.ArrayType(th.NumberType), required=True),
            th.Property("upper", th.ArrayType(th.NumberType), required=True),
            th.Property("sampling", th.StringType, default="grid", allowed_values=["grid", "random"]),
        ),
        required=True,
        description="Box to discretize.",
    ),
    th.Property("resolution", th.IntegerType, required=True, description="Atoms per axis (grid) or in total."),
    th.Property("r", th.NumberType, required=True, description="Operator radius."),
    th.Property("seed", th.IntegerType, description="Seed; mandatory for random sampling."),
    th.Property("u", th.StringType, default="x", description="First field of the Green check."),
    th.Property("v", th.StringType, default="x^2", description="Second field of the Green check."),
    th.Property("f", th.StringType, default="0", description="Poisson source."),
    th.Property("g", th.StringType, default="0", description="Poisson boundary data."),
    th.Property(
        "boundary_width",
        th.NumberType,
        description="Atoms closer than this to the region's faces form the boundary (default r).",
    ),
    th.Property("output", OUTPUT_SCHEMA, default={}, description="Where and how to write the report."),
).to_dict()


def worker_count() -> int:
    """Threads for radius schedules and suites: ``AMV_THREADS`` or min(4, cpus).

    Raises:
        ConfigError: ``AMV_THREADS`` is not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return min(4, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError as e:
        msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        raise ConfigError(msg, field=THREADS_ENV) from e
    if value < 1:
        msg = f"{THREADS_ENV} must be a positive integer, got {raw!r}"
        raise ConfigError(msg, field=THREADS_ENV)
    return value


def load_json(path: str | os.PathLike[str]) -> dict[str, t.Any]:
    """Read a JSON config file.

    Raises:
        ConfigError: the file is missing, unreadable or not a JSON object.
    """
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except OSError as e:
        msg = f"Cannot read config file {source}: {e.strerror}"
        raise ConfigError(msg) from e
    except json.JSONDecodeError as e:
        msg = f"Config file {source} is not valid JSON: {e.msg} (line {e.lineno})"
        raise ConfigError(msg) from e
    if not isinstance(data, dict):
        msg = f"Config file {source} must hold a JSON object"
        raise ConfigError(msg)
    return data


def _field_path(error: jsonschema.ValidationError) -> str | None:
    parts = list(error.absolute_path)
    if error.validator == "required":
        # the missing key is named in the message, not in the path
        missing = error.message.split("'")[1] if "'" in error.message else None
        if missing:
            parts.append(missing)
    if not parts:
        return None
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else f".{part}" if out else str(part)
    return out


def validate(data: t.Mapping[str, t.Any], schema: dict[str, t.Any]) -> None:
    """Validate ``data`` and report the first error with its field path.

    Raises:
        ConfigError: ``data`` does not match ``schema``.
    """
    validator = jsonschema.Draft7Validator(schema)
    error = jsonschema.exceptions.best_match(validator.iter_errors(data))
    if error is not None:
        field = _field_path(error)
        where = f" at {field}" if field else ""
        msg = f"Invalid configuration{where}: {error.message}"
        raise ConfigError(msg, field=field)


def with_defaults(data: t.Mapping[str, t.Any], schema: t.Mapping[str, t.Any]) -> dict[str, t.Any]:
    """Copy of ``data`` with the schema's defaults filled in, nested objects included."""
    out = copy.deepcopy(dict(data))
    for key, prop in schema.get("properties", {}).items():
        if key not in out and "default" in prop:
            out[key] = copy.deepcopy(prop["default"])
        if isinstance(out.get(key), dict) and "properties" in prop:
            out[key] = with_defaults(out[key], prop)
    return out


def _positive(value: float, field: str) -> None:
    if not value > 0:
        msg = f"{field} must be positive, got {value}"
        raise ConfigError(msg, field=field)


def build_schedule(data: t.Mapping[str, t.Any]) -> RadiusSchedule:
    """Radius schedule from the ``schedule`` block.

    Raises:
        ConfigError: r0 <= 0, ratio outside (0, 1) or count < 4.
    """
    r0, ratio, count = float(data["r0"]), float(data["ratio"]), int(data["count"])
    _positive(r0, "schedule.r0")
    if not 0.0 < ratio < 1.0:
        msg = f"schedule.ratio must lie in (0, 1), got {ratio}"
        raise ConfigError(msg, field="schedule.ratio")
    if count < 4:
        msg = f"schedule.count must be at least 4, got {count}"
        raise ConfigError(msg, field="schedule.count")
    return RadiusSchedule(r0, ratio, count)


def build_budget(data: t.Mapping[str, t.Any]) -> EffortBudget:
    """Effort budget from the ``budget`` block."""
    max_evals, target = int(data["max_evals"]), float(data["target_error"])
    mc_k = float(data.get("mc_k", 3.0))
    _positive(max_evals, "budget.max_evals")
    _positive(target, "budget.target_error")
    _positive(mc_k, "budget.mc_k")
    return EffortBudget(max_evals=max_evals, target_error=target, mc_k=mc_k)


def build_convergence(data: t.Mapping[str, t.Any]) -> ConvergenceSettings:
    """Classification thresholds from the ``convergence`` block."""
    try:
        return ConvergenceSettings(
            alpha_min=float(data["alpha_min"]),
            r2_min=float(data["r2_min"]),
            relative_floor=float(data["relative_floor"]),
            stability=float(data.get("stability", 1e-6)),
        )
    except AmvLabError as e:
        msg = f"Invalid convergence settings: {e}"
        raise ConfigError(msg, field="convergence") from e


def uses_monte_carlo(space: t.Mapping[str, t.Any]) -> bool:
    """Whether a space descriptor selects a Monte Carlo backend."""
    return space.get("kind") == "heisenberg" or space.get("backend") == "monte-carlo"


def build_space(desc: t.Mapping[str, t.Any], seed: int | None = None) -> SpaceHandle:
    """Space from a descriptor.

    Besides the descriptor kinds of :func:`space_from_descriptor`, accepts the
    shortcuts ``{"kind": "example_complex", "variant": 1|2|3}`` and
    ``{"kind": "rays", "angles": [...], "length": 1.0}``.

    Raises:
        ConfigError: unknown kind or invalid parameters.
    """
    desc = dict(desc)
    if seed is not None and "seed" not in desc:
        desc["seed"] = seed
    kind = desc.get("kind")
    try:
        if kind == "example_complex":
            return example_complex(int(desc.get("variant", 1)))
        if kind == "rays":
            return ray_star([float(a) for a in desc["angles"]], float(desc.get("length", 1.0)))
        return space_from_descriptor(desc)
    except KeyError as e:
        msg = f"Space descriptor of kind {kind!r} lacks {e.args[0]!r}"
        raise ConfigError(msg, field=f"space.{e.args[0]}") from e
    except (AmvLabError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        msg = f"Cannot build space of kind {kind!r}: {e}"
        raise ConfigError(msg, field="space") from e


def build_field(text: str, space: SpaceHandle, field: str = "field") -> ExpressionField:
    """Field over the space's coordinates.

    Raises:
        ConfigError: unknown name or malformed expression.
    """
    try:
        return field_from_spec(text, space.coordinate_names)
    except FieldExpressionError as e:
        msg = f"Invalid {field} {text!r}: {e}"
        raise ConfigError(msg, field=field) from e


def build_points(points: t.Sequence[t.Sequence[float]], space: SpaceHandle) -> list[tuple[float, ...]]:
    """Evaluation points, checked against the space's dimension."""
    out = []
    for i, p in enumerate(points):
        if len(p) != space.ambient_dim:
            msg = f"points[{i}] has {len(p)} coordinates, space {space.kind} needs {space.ambient_dim}"
            raise ConfigError(msg, field=f"points[{i}]")
        out.append(tuple(float(c) for c in p))
    if not out:
        msg = "At least one evaluation point is needed"
        raise ConfigError(msg, field="points")
    return out


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """A validated ``eval`` configuration."""

    space: dict[str, t.Any]
    field: str
    points: list[list[float]]
    schedule: dict[str, t.Any]
    budget: dict[str, t.Any]
    convergence: dict[str, t.Any]
    seed: int | None
    output: dict[str, t.Any]

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> ExperimentConfig:
        """Validate, fill defaults and check cross-field rules.

        Raises:
            ConfigError: the first violation, with its field path.
        """
        validate(data, EXPERIMENT_SCHEMA)
        full = with_defaults(data, EXPERIMENT_SCHEMA)
        config = cls(
            space=full["space"],
            field=full["field"],
            points=full["points"],
            schedule=full["schedule"],
            budget=full["budget"],
            convergence=full["convergence"],
            seed=full.get("seed"),
            output=full["output"],
        )
        build_schedule(config.schedule)
        build_budget(config.budget)
        build_convergence(config.convergence)
        if uses_monte_carlo(config.space) and config.seed is None and "seed" not in config.space:
            msg = "A seed is mandatory when a Monte Carlo backend is selected"
            raise ConfigError(msg, field="seed")
        return config

    @classmethod
    def from_file(cls, path: str | os.PathLike[str]) -> ExperimentConfig:
        """Load and validate a config file."""
        config = cls.from_dict(load_json(path))
        logger.info("Loaded experiment config %s (%s space)", path, config.space["kind"])
        return config

    def override(self, **changes: t.Any) -> ExperimentConfig:
        """Copy with command-line overrides applied (``None`` values are ignored)."""
        output = dict(self.output)
        if changes.get("out") is not None:
            output["path"] = changes["out"]
        if changes.get("format") is not None:
            output["format"] = changes["format"]
        seed = changes["seed"] if changes.get("seed") is not None else self.seed
        return dataclasses.replace(self, output=output, seed=seed)

    def build(
        self,
    ) -> tuple[
        SpaceHandle, ExpressionField, list[tuple[float, ...]], RadiusSchedule, EffortBudget, ConvergenceSettings,
    ]:
        """Instantiate the experiment's objects."""
        space = build_space(self.space, self.seed)
        return (
            space,
            build_field(self.field, space),
            build_points(self.points, space),
            build_schedule(self.schedule),
            build_budget(self.budget),
            build_convergence(self.convergence),
        )


@dataclasses.dataclass(frozen=True)
class CloudConfig:
    """A validated ``green`` / ``poisson`` configuration."""

    space: dict[str, t.Any]
    region: dict[str, t.Any]
    resolution: int
    r: float
    seed: int | None
    u: str
    v: str
    f: str
    g: str
    boundary_width: float | None
    output: dict[str, t.Any]

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> CloudConfig:
        """Validate, fill defaults and check cross-field rules.

        Raises:
            ConfigError: the first violation, with its field path.
        """
        validate(data, CLOUD_SCHEMA)
        full = with_defaults(data, CLOUD_SCHEMA)
        config = cls(
            space=full["space"],
            region=full["region"],
            resolution=int(full["resolution"]),
            r=float(full["r"]),
            seed=full.get("seed"),
            u=full["u"],
            v=full["v"],
            f=full["f"],
            g=full["g"],
            boundary_width=full.get("boundary_width"),
            output=full["output"],
        )
        _positive(config.resolution, "resolution")
        _positive(config.r, "r")
        if len(config.region["lower"]) != len(config.region["upper"]):
            msg = "region.lower and region.upper differ in length"
            raise ConfigError(msg, field="region.upper")
        if config.region["sampling"] == "random" and config.seed is None:
            msg = "A seed is mandatory for random sampling"
            raise ConfigError(msg, field="seed")
        if uses_monte_carlo(config.space) and config.seed is None and "seed" not in config.space:
            msg = "A seed is mandatory when a Monte Carlo backend is selected"
            raise ConfigError(msg, field="seed")
        return config

    @classmethod
    def from_file(cls, path: str | os.PathLike[str]) -> CloudConfig:
        """Load and validate a config file."""
        config = cls.from_dict(load_json(path))
        logger.info("Loaded cloud config %s (%s space)", path, config.space["kind"])
        return config

    def override(self, **changes: t.Any) -> CloudConfig:
        """Copy with command-line overrides applied (``None`` values are ignored)."""
        output = dict(self.output)
        if changes.get("out") is not None:
            output["path"] = changes["out"]
        if changes.get("format") is not None:
            output["format"] = changes["format"]
        seed = changes["seed"] if changes.get("seed") is not None else self.seed
        return dataclasses.replace(self, output=output, seed=seed)

    def region_spec(self) -> RegionSpec:
        """The region as a :class:`RegionSpec`."""
        return RegionSpec(tuple(self.region["lower"]), tuple(self.region["upper"]), self.region["sampling"])

    def build_cloud(self) -> tuple[SpaceHandle, AtomCloud]:
        """Space and discretized cloud.

        Raises:
            ConfigError: region and space dimensions disagree.
        """
        space = build_space(self.space, self.seed)
        region = self.region_spec()
        if region.dim != space.ambient_dim:
            msg = f"region has dimension {region.dim}, space {space.kind} has {space.ambient_dim}"
            raise ConfigError(msg, field="region")
        return space, make_atom_cloud(space, region, self.resolution, self.seed or 0)

    def boundary(self, cloud: AtomCloud, r: float) -> NDArray[np.int64]:
        """Atoms closer than ``boundary_width`` (default ``r``) to a face of the region."""
        width = self.boundary_width if self.boundary_width is not None else r
        lower = np.asarray(cloud.region.lower)
        upper = np.asarray(cloud.region.upper)
        gap = np.minimum(cloud.points - lower, upper - cloud.points)
        return np.flatnonzero(np.any(gap < width, axis=1))
