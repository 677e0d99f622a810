"""Scalar fields evaluated on the ambient chart."""

from __future__ import annotations

import re
import typing as t

import numpy as np
import sympy
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from amv_lab.exceptions import FieldExpressionError, InputError

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    ArrayFunc = t.Callable[[NDArray[np.float64]], NDArray[np.float64]]

# Grammar: + - * / ^ ( ), numeric literals, coordinates and these names.
FUNCTIONS: dict[str, t.Any] = {
    "abs": sympy.Abs,
    "sgn": sympy.sign,
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "sqrt": sympy.sqrt,
    "log": sympy.log,
    "pi": sympy.pi,
}
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_ALLOWED_CHARS = re.compile(r"^[A-Za-z_0-9.+\-*/^() \t]*$")
_NONSMOOTH = (sympy.sign, sympy.Abs, sympy.Heaviside)

# Named built-in fields, written in the expression grammar.
NAMED_FIELDS: dict[str, str] = {
    "bose": "x^2 - 3*x*y + y^2",
    "bose_weight": "(x + y)^2",
    "sgn": "sgn(x)",
    "sgn_step": "sgn(x) - sgn(x - 1)",
    "off_origin": "sgn(x^2 + y^2)",
    "radial": "x^2 + y^2",
    "graded": "x^2",
    "kirchhoff_balanced": "x^2 + 3*x*y - y^2",
}


class ScalarField:
    """A real function on the ambient chart, evaluated on arrays of points.

    ``func`` maps an ``(N, n)`` array to ``(N,)`` values. Gradient and Hessian
    oracles are optional; they are used by verification code only.
    """

    def __init__(
        self,
        func: ArrayFunc,
        dim: int,
        *,
        name: str = "field",
        gradient: t.Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None,
        hessian: t.Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None,
        breakpoints: t.Sequence[float] = (),
    ) -> None:
        """Initialize the field.

        Args:
            func: Vectorised evaluator.
            dim: Ambient dimension of the chart.
            name: Label used in reports and error messages.
            gradient: Point -> gradient vector oracle.
            hessian: Point -> Hessian matrix oracle.
            breakpoints: 1-D locations where the field is not smooth.
        """
        self._func = func
        self.dim = dim
        self.name = name
        self._gradient = gradient
        self._hessian = hessian
        self.breakpoints = tuple(sorted(float(b) for b in breakpoints))

    def __repr__(self) -> str:
        """Return a short representation."""
        return f"{type(self).__name__}({self.name!r}, dim={self.dim})"

    def __call__(self, points: t.Any) -> NDArray[np.float64]:  # noqa: ANN401
        """Evaluate at an ``(N, n)`` array (or a single point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            msg = f"Field {self.name} expects {self.dim} coordinates, got {pts.shape[1]}"
            raise InputError(msg)
        values = np.asarray(self._func(pts), dtype=float)
        return np.broadcast_to(values, (pts.shape[0],)).copy()

    def value(self, point: t.Sequence[float]) -> float:
        """Evaluate at a single point."""
        return float(self(np.asarray(point, dtype=float)[None, :])[0])

    @property
    def has_derivatives(self) -> bool:
        """Whether gradient and Hessian oracles are available."""
        return self._gradient is not None and self._hessian is not None

    def gradient(self, point: t.Sequence[float]) -> NDArray[np.float64]:
        """Gradient at ``point``."""
        if self._gradient is None:
            msg = f"Field {self.name} has no gradient oracle"
            raise InputError(msg)
        return np.asarray(self._gradient(np.asarray(point, dtype=float)), dtype=float)

    def hessian(self, point: t.Sequence[float]) -> NDArray[np.float64]:
        """Hessian at ``point``."""
        if self._hessian is None:
            msg = f"Field {self.name} has no Hessian oracle"
            raise InputError(msg)
        return np.asarray(self._hessian(np.asarray(point, dtype=float)), dtype=float)

    def directional_derivative(
        self,
        point: t.Sequence[float],
        direction: t.Sequence[float],
    ) -> float:
        """Derivative along a unit direction."""
        return float(np.dot(self.gradient(point), np.asarray(direction, dtype=float)))

    def pullback(
        self,
        transform: t.Callable[[NDArray[np.float64]], NDArray[np.float64]],
        name: str | None = None,
    ) -> ScalarField:
        """Return ``self ∘ transform`` (derivative oracles are dropped)."""
        return ScalarField(
            lambda pts: self(transform(pts)),
            self.dim,
            name=name or f"{self.name}∘T",
        )

    @classmethod
    def constant(cls, value: float, dim: int) -> ScalarField:
        """Constant field."""
        return cls(
            lambda pts: np.full(pts.shape[0], float(value)),
            dim,
            name=repr(float(value)),
            gradient=lambda _p: np.zeros(dim),
            hessian=lambda _p: np.zeros((dim, dim)),
        )

    @classmethod
    def coordinate(cls, index: int, dim: int, origin: t.Sequence[float] | None = None) -> ScalarField:
        """The field ``y ↦ y_index - origin_index``."""
        shift = 0.0 if origin is None else float(origin[index])
        return cls(lambda pts: pts[:, index] - shift, dim, name=f"y{index}")


def linear_combination(a: float, u: ScalarField, b: float, v: ScalarField) -> ScalarField:
    """Return ``a*u + b*v`` evaluated node by node."""
    if u.dim != v.dim:
        msg = "Cannot combine fields of different dimensions"
        raise InputError(msg)
    return ScalarField(
        lambda pts: a * u(pts) + b * v(pts),
        u.dim,
        name=f"{a}*{u.name}+{b}*{v.name}",
        breakpoints=tuple(u.breakpoints) + tuple(v.breakpoints),
    )


class ExpressionField(ScalarField):
    """A field given by an arithmetic expression in the coordinates.

    Parsing and differentiation go through sympy, so gradients and Hessians
    are exact.
    """

    def __init__(self, text: str, variables: t.Sequence[str]) -> None:
        """Parse ``text`` over ``variables``.

        Args:
            text: Expression such as ``"x^2 - 3*x*y + y^2"``.
            variables: Coordinate names in chart order.

        Raises:
            FieldExpressionError: if the expression is outside the grammar.
        """
        self.text = text
        self.variables = tuple(variables)
        self.symbols = tuple(sympy.Symbol(v, real=True) for v in self.variables)
        self.expr = parse_field_expression(text, self.variables, self.symbols)
        self._grad_exprs = [sympy.diff(self.expr, s) for s in self.symbols]
        self._hess_exprs = [
            [sympy.diff(g, s) for s in self.symbols] for g in self._grad_exprs
        ]
        func = _lambdify(self.symbols, self.expr)
        grad_funcs = [_lambdify(self.symbols, g) for g in self._grad_exprs]
        hess_funcs = [[_lambdify(self.symbols, h) for h in row] for row in self._hess_exprs]
        super().__init__(
            func,
            len(self.variables),
            name=text,
            gradient=lambda p: np.array([float(g(p[None, :])[0]) for g in grad_funcs]),
            hessian=lambda p: np.array(
                [[float(h(p[None, :])[0]) for h in row] for row in hess_funcs],
            ),
            breakpoints=_breakpoints(self.expr, self.symbols),
        )

    def laplacian(self) -> ExpressionField:
        """Euclidean Laplacian as a new field."""
        lap = sum(self._hess_exprs[i][i] for i in range(len(self.symbols)))
        return ExpressionField(str(lap), self.variables)


def parse_field_expression(
    text: str,
    variables: t.Sequence[str],
    symbols: t.Sequence[sympy.Symbol] | None = None,
) -> sympy.Expr:
    """Validate and parse an expression of the field grammar."""
    if not text or not _ALLOWED_CHARS.match(text):
        msg = f"Field expression {text!r} contains characters outside the grammar"
        raise FieldExpressionError(msg)
    for token in _TOKEN.findall(text):
        if token not in variables and token not in FUNCTIONS:
            msg = f"Unknown name {token!r} in field expression {text!r}"
            raise FieldExpressionError(msg)
    if symbols is None:
        symbols = [sympy.Symbol(v, real=True) for v in variables]
    local_dict: dict[str, t.Any] = dict(FUNCTIONS)
    local_dict.update(dict(zip(variables, symbols)))
    try:
        expr = parse_expr(
            text,
            local_dict=local_dict,
            global_dict={"Integer": sympy.Integer, "Float": sympy.Float,
                         "Rational": sympy.Rational, "Symbol": sympy.Symbol},
            transformations=(*standard_transformations, convert_xor),
        )
    except (SyntaxError, TypeError, AttributeError) as e:
        msg = f"Cannot parse field expression {text!r}"
        raise FieldExpressionError(msg) from e
    if not isinstance(expr, sympy.Expr):
        msg = f"Field expression {text!r} is not a scalar expression"
        raise FieldExpressionError(msg)
    return expr


def field_from_spec(spec: str, variables: t.Sequence[str]) -> ExpressionField:
    """Build a field from a named built-in or an expression."""
    return ExpressionField(NAMED_FIELDS.get(spec, spec), variables)


def _lambdify(symbols: t.Sequence[sympy.Symbol], expr: sympy.Expr) -> ArrayFunc:
    compiled = sympy.lambdify(symbols, expr, modules="numpy")

    def evaluate(pts: NDArray[np.float64]) -> NDArray[np.float64]:
        with np.errstate(all="ignore"):
            out = compiled(*(pts[:, i] for i in range(pts.shape[1])))
        return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],))

    return evaluate


def _breakpoints(expr: sympy.Expr, symbols: t.Sequence[sympy.Symbol]) -> tuple[float, ...]:
    # Only 1-D charts: zeros of the arguments of sgn/abs.
    if len(symbols) != 1:
        return ()
    found: set[float] = set()
    for atom in expr.atoms(*_NONSMOOTH):
        zeros = sympy.solveset(atom.args[0], symbols[0], domain=sympy.S.Reals)
        if isinstance(zeros, sympy.FiniteSet):
            found.update(float(z) for z in zeros)
    return tuple(sorted(found))
