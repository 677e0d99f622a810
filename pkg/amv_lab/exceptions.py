"""Errors raised by amv-lab."""

from __future__ import annotations

import typing as t

from singer_sdk.exceptions import ConfigValidationError


class AmvLabError(Exception):
    """Base class for every amv-lab failure."""


class InputError(AmvLabError, ValueError):
    """Malformed input, e.g. a point of the wrong dimension."""


class DomainError(AmvLabError):
    """A point, region or atom lies outside where the operation is defined."""


class FieldExpressionError(AmvLabError):
    """A field expression uses symbols or functions outside the grammar."""


class FieldEvaluationError(AmvLabError):
    """A field produced a non-finite value at a node of positive weight."""

    def __init__(self, msg: str, node: t.Sequence[float] | None = None) -> None:
        """Initialize the error.

        Args:
            msg: Human readable description.
            node: Coordinates of the offending node.
        """
        super().__init__(msg)
        self.node = None if node is None else tuple(float(c) for c in node)


class NumericError(AmvLabError):
    """A numerical routine did not reach its tolerance."""

    def __init__(self, msg: str, diagnostics: dict[str, t.Any] | None = None) -> None:
        """Initialize the error.

        Args:
            msg: Human readable description.
            diagnostics: Solver state at the point of failure.
        """
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class SingularSystemError(NumericError):
    """The interior Poisson system is (numerically) singular."""

    def __init__(self, msg: str, condition: float) -> None:
        """Initialize the error.

        Args:
            msg: Human readable description.
            condition: 1-norm condition estimate, ``inf`` for exact singularity.
        """
        super().__init__(msg, {"condition": condition})
        self.condition = condition


class TraceTooShortError(AmvLabError):
    """A radius trace has fewer points than classification needs."""


class MissingConstantsError(AmvLabError):
    """A norm bound was requested without doubling or Ahlfors constants."""


class ConstantsFileMissingError(AmvLabError):
    """The generated Heisenberg constants file is not available."""


class EvaluationError(AmvLabError):
    """A radius evaluation failed inside a schedule."""

    def __init__(self, msg: str, partial_trace: list[tuple[float, float, float]]) -> None:
        """Initialize the error.

        Args:
            msg: Human readable description.
            partial_trace: The (r, value, abs_error) rows computed before the failure.
        """
        super().__init__(msg)
        self.partial_trace = partial_trace


class ConfigError(AmvLabError, ConfigValidationError):
    """An experiment configuration failed validation."""

    def __init__(self, msg: str, field: str | None = None) -> None:
        """Initialize the error.

        Args:
            msg: Human readable description.
            field: Dotted path of the offending field.
        """
        super().__init__(msg)
        self.field = field
