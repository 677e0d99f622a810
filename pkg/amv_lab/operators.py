"""Averaging operators on atom clouds.

For a cloud with atoms ``x_i`` and weights ``w_i`` and the kernel
``K_ij = 1[d(x_i, x_j) < r]`` (self pairs included):

* ``m_i = Σ_j K_ij w_j`` is the discrete ball mass,
* ``(T_r u)_i = Σ_j K_ij w_j u_j / m_i``,
* ``Δ_r = (T_r - I) / r²``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import typing as t
from pathlib import Path

import numpy as np
from scipy import integrate, sparse
from scipy.sparse import linalg as splinalg

from amv_lab.core import AtomCloud, EffortBudget, Point, RegionSpec, SpaceHandle
from amv_lab.estimator import (
    AmvResult,
    ConvergenceSettings,
    RadiusSchedule,
    TracePoint,
    amv_at_radius,
    fit_trace,
)
from amv_lab.exceptions import (
    DomainError,
    InputError,
    MissingConstantsError,
    NumericError,
    SingularSystemError,
)

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    from amv_lab.fields import ScalarField

logger = logging.getLogger(__name__)

KINDS = ("T_r", "Delta_r")
CONDITION_LIMIT = 1e13
GREEN_TOLERANCE = 1e-10
POISSON_TOLERANCE = 1e-10


@dataclasses.dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """``T_r`` or ``Δ_r`` on a cloud.

    ``matrix`` holds the assembled operator; :meth:`apply` uses the
    difference form ``Σ_j K_ij w_j (u_j - u_i)`` so that ``T_r 1 = 1`` and
    ``Δ_r 1 = 0`` hold exactly.
    """

    cloud: AtomCloud
    r: float
    kind: str
    kernel: sparse.csr_matrix
    row_masses: NDArray[np.float64]
    matrix: sparse.csr_matrix

    @property
    def size(self) -> int:
        """Number of atoms."""
        return len(self.cloud)

    def apply(self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        """Apply the operator to per-atom values."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.size,):
            msg = f"Expected {self.size} values, got shape {u.shape}"
            raise InputError(msg)
        w = self.cloud.weights
        m = self.row_masses
        increment = (self.kernel @ (w * u) - m * u) / m
        if self.kind == "T_r":
            return u + increment
        return increment / (self.r * self.r)

    def to_dense(self) -> NDArray[np.float64]:
        """Dense matrix."""
        return self.matrix.toarray()

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {"kind": self.kind, "r": self.r, "atoms": self.size, "nnz": int(self.matrix.nnz)}


def ball_kernel(cloud: AtomCloud, r: float) -> sparse.csr_matrix:
    """0/1 kernel of pairs at distance below ``r``."""
    if not r > 0 or not math.isfinite(r):
        msg = f"Radius must be positive and finite, got {r}"
        raise InputError(msg)
    rows, cols = cloud.metric.neighbors(cloud.points, r)
    n = len(cloud)
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def resolve_radius_ties(cloud: AtomCloud, r: float, max_steps: int = 64) -> float:
    """Nudge ``r`` upward one ulp at a time until no pair sits exactly at distance ``r``."""
    radius = float(r)
    for _ in range(max_steps):
        strict = len(cloud.metric.neighbors(cloud.points, radius)[0])
        closed = len(cloud.metric.neighbors(cloud.points, float(np.nextafter(radius, math.inf)))[0])
        if strict == closed:
            if radius != r:
                logger.info("Radius %.17g hits atom distances exactly; using %.17g", r, radius)
            return radius
        radius = float(np.nextafter(radius, math.inf))
    msg = f"Could not move radius {r} off atom distances"
    raise NumericError(msg, {"r": r, "steps": max_steps})


def _row_masses(cloud: AtomCloud, kernel: sparse.csr_matrix) -> NDArray[np.float64]:
    masses = kernel @ cloud.weights
    empty = np.flatnonzero(~(masses > 0))
    if len(empty):
        atom = Point(tuple(cloud.points[empty[0]].tolist()))
        msg = f"Atom {int(empty[0])} at {atom.coords} has an empty ball"
        raise DomainError(msg)
    return masses


def build_Tr(cloud: AtomCloud, r: float) -> DiscreteOperator:  # noqa: N802
    """Row-stochastic averaging operator ``T_r``.

    Raises:
        DomainError: an atom has an empty ball.
    """
    kernel = ball_kernel(cloud, r)
    masses = _row_masses(cloud, kernel)
    matrix = sparse.diags(1.0 / masses) @ kernel @ sparse.diags(cloud.weights)
    logger.debug("T_r at r=%.4g: %d atoms, %d nonzeros", r, len(cloud), kernel.nnz)
    return DiscreteOperator(cloud, float(r), "T_r", kernel, masses, sparse.csr_matrix(matrix))


def build_amv_operator(cloud: AtomCloud, r: float) -> DiscreteOperator:
    """``Δ_r = (T_r - I) / r²``; the diagonal makes every row sum to 0.

    Raises:
        DomainError: an atom has an empty ball.
    """
    t_r = build_Tr(cloud, r)
    off = t_r.matrix - sparse.diags(t_r.matrix.diagonal())
    off = sparse.csr_matrix(off)
    off.eliminate_zeros()
    diagonal = -np.asarray(off.sum(axis=1)).ravel()
    matrix = (off + sparse.diags(diagonal)) / (r * r)
    return DiscreteOperator(cloud, float(r), "Delta_r", t_r.kernel, t_r.row_masses, sparse.csr_matrix(matrix))


def lemma_weight(op_or_cloud: DiscreteOperator | AtomCloud, r: float | None = None) -> NDArray[np.float64]:
    """``w(x_i) = Σ_j K_ij w_j / m_j``, the weight making ``T_r`` bounded from ``L^p(w μ)``."""
    op = _operator(op_or_cloud, r)
    return op.kernel @ (op.cloud.weights / op.row_masses)


@dataclasses.dataclass(frozen=True)
class LemmaCheck:
    """``‖T_r u‖_p`` against ``‖u‖_{p, w μ}``."""

    p: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        """Inequality up to roundoff."""
        return self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-300


def _norm(values: NDArray[np.float64], weights: NDArray[np.float64], p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(values[weights > 0]), initial=0.0))
    return float(np.sum(weights * np.abs(values) ** p) ** (1.0 / p))


def lemma_inequality(op: DiscreteOperator, u: NDArray[np.float64], p: float) -> LemmaCheck:
    """Evaluate both sides of ``‖T_r u‖_p <= ‖u‖_{p, w μ}``."""
    if p not in (1, 2, math.inf):
        msg = f"p must be 1, 2 or inf, got {p}"
        raise InputError(msg)
    t_r = op if op.kind == "T_r" else build_Tr(op.cloud, op.r)
    w = op.cloud.weights
    lw = lemma_weight(t_r)
    return LemmaCheck(float(p), _norm(t_r.apply(u), w, p), _norm(np.asarray(u, dtype=float), w * lw, p))


@dataclasses.dataclass(frozen=True)
class GreenReport:
    """Both sides of the discrete Green identity.

    ``lhs = Σ_i w_i (v_i Δ_r u_i - u_i Δ_r v_i)`` and
    ``rhs = Σ_{i<j} K_ij w_i w_j (u_i v_j - u_j v_i) (1/m_j - 1/m_i) / r²``.
    """

    lhs: float
    rhs: float
    defect: float
    selfadjoint_defect: float
    scale: float

    @property
    def passed(self) -> bool:
        """Defect within tolerance of the summands' scale."""
        return self.defect <= GREEN_TOLERANCE * max(self.scale, 1e-300)

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {**dataclasses.asdict(self), "passed": self.passed}


def green_check(
    op_or_cloud: DiscreteOperator | AtomCloud,
    u: NDArray[np.float64],
    v: NDArray[np.float64],
    r: float | None = None,
) -> GreenReport:
    """Compare the row-wise and pairwise forms of the Green identity."""
    op = _operator(op_or_cloud, r, kind="Delta_r")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        msg = "Green check needs finite values at every atom"
        raise InputError(msg)
    w = op.cloud.weights
    m = op.row_masses
    du = op.apply(u)
    dv = op.apply(v)
    lhs = float(np.sum(w * (v * du - u * dv)))
    upper = sparse.triu(op.kernel, k=1).tocoo()
    i, j = upper.row, upper.col
    pair = (u[i] * v[j] - u[j] * v[i]) * w[i] * w[j] * (1.0 / m[j] - 1.0 / m[i])
    rhs = float(np.sum(pair)) / (op.r * op.r)
    scale = float(np.sum(w * (np.abs(v * du) + np.abs(u * dv))))
    return GreenReport(
        lhs=lhs,
        rhs=rhs,
        defect=abs(lhs - rhs),
        selfadjoint_defect=selfadjoint_defect(op),
        scale=scale,
    )


def selfadjoint_defect(op: DiscreteOperator) -> float:
    """``‖S - Sᵀ‖_F`` with ``S = D^½ Δ_r D^-½``; zero iff ``Δ_r`` is self-adjoint in ``L²(w)``."""
    root = np.sqrt(op.cloud.weights)
    scaled = sparse.diags(root / op.row_masses) @ op.kernel @ sparse.diags(root)
    diff = (scaled - scaled.T) / (op.r * op.r)
    return float(splinalg.norm(diff)) if diff.nnz else 0.0


@dataclasses.dataclass(frozen=True)
class NormProbe:
    """Empirical operator norms against the bounds the measure's constants give."""

    p: float
    t_norm: float
    t_bound: float
    delta_norm: float
    delta_bound: float
    bound_source: str

    @property
    def ratio(self) -> float:
        """``‖T_r‖_p / bound``."""
        return self.t_norm / self.t_bound

    def within(self, tolerance: float = 1e-9) -> bool:
        """Both norms respect their bounds."""
        return self.ratio <= 1.0 + tolerance and self.delta_norm <= self.delta_bound * (1.0 + tolerance)

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {**dataclasses.asdict(self), "ratio": self.ratio}


def _t_bound(cloud: AtomCloud) -> tuple[float, str]:
    constants = cloud.norm_constants
    candidates: list[tuple[float, str]] = []
    if constants.uniform:
        candidates.append((1.0, "uniform"))
    if constants.ahlfors is not None:
        c_low, c_high = constants.ahlfors
        candidates.append((c_high / c_low, "ahlfors"))
    if constants.doubling is not None:
        candidates.append((constants.doubling**2, "doubling"))
    if not candidates:
        msg = "The cloud's source space declares no uniform, Ahlfors or doubling constants"
        raise MissingConstantsError(msg)
    return min(candidates)


def _power_norm(matrix: sparse.spmatrix, start: NDArray[np.float64], max_iter: int, tol: float) -> float:
    """Spectral norm by power iteration on ``AᵀA``."""
    x = start / np.linalg.norm(start)
    estimate = float(np.linalg.norm(matrix @ x))
    for _ in range(max_iter):
        y = matrix.T @ (matrix @ x)
        norm_y = float(np.linalg.norm(y))
        if norm_y == 0.0:
            return 0.0
        x = y / norm_y
        new = float(np.linalg.norm(matrix @ x))
        if abs(new - estimate) <= tol * max(new, 1.0):
            return max(new, estimate)
        estimate = max(new, estimate)
    return estimate


def _operator_norm(op: DiscreteOperator, p: float, max_iter: int, tol: float) -> float:
    w = op.cloud.weights
    a = abs(op.matrix)
    if p == 1:
        # ‖A‖_{L¹(w)} = max_j Σ_i w_i |A_ij| / w_j
        return float(np.max(np.asarray(a.T @ w).ravel() / w))
    if math.isinf(p):
        return float(np.max(np.asarray(a.sum(axis=1)).ravel()))
    root = np.sqrt(w)
    scaled = sparse.diags(root) @ op.matrix @ sparse.diags(1.0 / root)
    return _power_norm(scaled, root, max_iter, tol)


def op_norm_probe(
    op_or_cloud: DiscreteOperator | AtomCloud,
    p: float,
    r: float | None = None,
    max_iter: int = 500,
    tol: float = 1e-12,
) -> NormProbe:
    """Estimate ``‖T_r‖`` and ``‖Δ_r‖`` on ``L^p(μ)`` and the bounds they must respect.

    Bounds: ``‖T_r‖ <= 1`` for uniform measures, ``C/c`` for Ahlfors-regular
    ones and ``C_μ²`` for doubling ones (the smallest available is used);
    ``‖Δ_r‖ <= (1 + ‖T_r‖ bound) / r²``.

    Raises:
        MissingConstantsError: the source space declares none of the constants.
    """
    if p not in (1, 2, math.inf):
        msg = f"p must be 1, 2 or inf, got {p}"
        raise InputError(msg)
    op = _operator(op_or_cloud, r)
    t_r = op if op.kind == "T_r" else build_Tr(op.cloud, op.r)
    delta = build_amv_operator(op.cloud, op.r)
    bound, source = _t_bound(op.cloud)
    if p == 1:
        t_norm = float(np.max(lemma_weight(t_r)))
    else:
        t_norm = _operator_norm(t_r, p, max_iter, tol)
    return NormProbe(
        p=float(p),
        t_norm=t_norm,
        t_bound=bound,
        delta_norm=_operator_norm(delta, p, max_iter, tol),
        delta_bound=(1.0 + bound) / (op.r * op.r),
        bound_source=source,
    )


def solve_poisson(
    op_or_cloud: DiscreteOperator | AtomCloud,
    f: NDArray[np.float64],
    boundary: t.Sequence[int] | NDArray[np.int64],
    g: NDArray[np.float64] | float,
    r: float | None = None,
    refinements: int = 3,
) -> NDArray[np.float64]:
    """Solve ``Δ_r u = f`` on interior atoms with ``u = g`` on ``boundary``.

    ``f`` is indexed by atom (boundary entries are ignored); ``g`` is either a
    scalar or one value per boundary atom. The interior block is factorized
    once and the solution improved by iterative refinement.

    Raises:
        DomainError: empty boundary.
        SingularSystemError: the interior block is singular or too ill-conditioned.
    """
    op = _operator(op_or_cloud, r, kind="Delta_r")
    n = op.size
    f = np.asarray(f, dtype=float)
    if f.shape != (n,):
        msg = f"Expected {n} source values, got shape {f.shape}"
        raise InputError(msg)
    bnd = np.asarray(boundary, dtype=np.int64).ravel()
    if len(bnd) == 0:
        msg = "Poisson problem needs a nonempty boundary"
        raise DomainError(msg)
    if len(np.unique(bnd)) != len(bnd) or bnd.min() < 0 or bnd.max() >= n:
        msg = f"Boundary indices must be distinct and lie in [0, {n})"
        raise InputError(msg)
    g_values = np.broadcast_to(np.asarray(g, dtype=float), bnd.shape) if np.ndim(g) == 0 else np.asarray(g, dtype=float)
    if g_values.shape != bnd.shape:
        msg = "Boundary data must be a scalar or one value per boundary atom"
        raise InputError(msg)
    u = np.zeros(n)
    u[bnd] = g_values
    interior = np.setdiff1d(np.arange(n), bnd)
    if len(interior) == 0:
        return u
    a = op.matrix
    a_ii = sparse.csc_matrix(a[interior][:, interior])
    rhs = f[interior] - a[interior][:, bnd] @ g_values
    try:
        lu = splinalg.splu(a_ii)
    except RuntimeError as e:
        msg = "Interior block of Δ_r is exactly singular"
        raise SingularSystemError(msg, math.inf) from e
    inverse = splinalg.LinearOperator(a_ii.shape, matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T"))
    condition = float(splinalg.onenormest(a_ii) * splinalg.onenormest(inverse))
    if not condition <= CONDITION_LIMIT:
        msg = f"Interior block of Δ_r has condition estimate {condition:.3g}"
        raise SingularSystemError(msg, condition)
    x = lu.solve(rhs)
    residual = rhs - a_ii @ x
    res_norm = float(np.max(np.abs(residual), initial=0.0))
    for _ in range(refinements):
        candidate = x + lu.solve(residual)
        new_residual = rhs - a_ii @ candidate
        new_norm = float(np.max(np.abs(new_residual), initial=0.0))
        if not new_norm < res_norm:
            break
        x, residual, res_norm = candidate, new_residual, new_norm
    scale = float(abs(a_ii).sum(axis=1).max()) * float(np.max(np.abs(x), initial=0.0))
    scale += float(np.max(np.abs(rhs), initial=0.0))
    if res_norm > POISSON_TOLERANCE * max(scale, 1e-300):
        msg = f"Poisson residual {res_norm:.3g} exceeds tolerance"
        raise NumericError(msg, {"residual": res_norm, "scale": scale, "condition": condition})
    logger.debug("Poisson solve: %d unknowns, condition %.3g, residual %.2g", len(interior), condition, res_norm)
    u[interior] = x
    return u


@dataclasses.dataclass(frozen=True)
class MaxPrinAudit:
    """Interior atoms contradicting the weak maximum principle.

    ``margin`` is the boundary maximum minus the interior maximum; a flagged
    atom attains the global maximum in the interior while ``Δ_r u > 0`` there
    or while the interior maximum exceeds the boundary maximum.
    """

    interior_max_atoms: list[int]
    reasons: list[str]
    margin: float
    global_max: float
    boundary_max: float
    perturbation: float = 0.0

    @property
    def classification(self) -> str:
        """``pass`` or ``violated``."""
        return "pass" if not self.interior_max_atoms else "violated"

    def as_dict(self) -> dict[str, t.Any]:
        """Report representation."""
        return {**dataclasses.asdict(self), "classification": self.classification}


def maxprin_audit(
    op_or_cloud: DiscreteOperator | AtomCloud,
    u: NDArray[np.float64],
    interior: t.Sequence[int] | NDArray[np.int64],
    r: float | None = None,
    barrier: NDArray[np.float64] | None = None,
    epsilon: float = 1e-6,
) -> MaxPrinAudit:
    """Audit ``u`` (or ``u + ε φ`` for a barrier ``φ``) for interior maxima.

    Raises:
        DomainError: the barrier is not strictly Δ_r-subharmonic on the interior.
    """
    op = _operator(op_or_cloud, r, kind="Delta_r")
    values = np.asarray(u, dtype=float)
    inner = np.unique(np.asarray(interior, dtype=np.int64))
    outer = np.setdiff1d(np.arange(op.size), inner)
    perturbation = 0.0
    if barrier is not None:
        phi = np.asarray(barrier, dtype=float)
        if not np.all(op.apply(phi)[inner] > 0):
            msg = "Barrier must satisfy Δ_r φ > 0 at every interior atom"
            raise DomainError(msg)
        values = values + epsilon * phi
        perturbation = epsilon
    lap = op.apply(values)
    top = float(np.max(values))
    boundary_max = float(np.max(values[outer])) if len(outer) else -math.inf
    interior_max = float(np.max(values[inner])) if len(inner) else -math.inf
    flagged: list[int] = []
    reasons: list[str] = []
    for i in inner[values[inner] == top]:
        if lap[i] > 0:
            flagged.append(int(i))
            reasons.append(f"maximum with Δ_r u = {lap[i]:.3g} > 0")
        elif interior_max > boundary_max:
            flagged.append(int(i))
            reasons.append("interior maximum exceeds the boundary maximum")
    audit = MaxPrinAudit(
        interior_max_atoms=flagged,
        reasons=reasons,
        margin=boundary_max - interior_max,
        global_max=top,
        boundary_max=boundary_max,
        perturbation=perturbation,
    )
    logger.debug("Maximum principle audit: %s (margin %.3g)", audit.classification, audit.margin)
    return audit


def minprin_audit(
    op_or_cloud: DiscreteOperator | AtomCloud,
    u: NDArray[np.float64],
    interior: t.Sequence[int] | NDArray[np.int64],
    r: float | None = None,
    barrier: NDArray[np.float64] | None = None,
    epsilon: float = 1e-6,
) -> MaxPrinAudit:
    """Minimum-principle audit: the maximum audit of ``-u`` (barrier ``-φ`` with ``Δ_r φ < 0``)."""
    neg_barrier = None if barrier is None else -np.asarray(barrier, dtype=float)
    return maxprin_audit(op_or_cloud, -np.asarray(u, dtype=float), interior, r, neg_barrier, epsilon)


@dataclasses.dataclass(frozen=True)
class ComparisonAudit:
    """Outcome of comparing two functions with ordered boundary data and Laplacians."""

    hypotheses_hold: bool
    holds: bool
    worst_gap: float


def comparison_audit(
    op_or_cloud: DiscreteOperator | AtomCloud,
    u: NDArray[np.float64],
    v: NDArray[np.float64],
    interior: t.Sequence[int] | NDArray[np.int64],
    r: float | None = None,
) -> ComparisonAudit:
    """Check ``u >= v`` given ``u >= v`` off the interior and ``Δ_r u <= Δ_r v`` on it.

    ``worst_gap`` is ``max (v - u)``; the conclusion holds when it is <= 0.
    """
    op = _operator(op_or_cloud, r, kind="Delta_r")
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inner = np.unique(np.asarray(interior, dtype=np.int64))
    outer = np.setdiff1d(np.arange(op.size), inner)
    gap = v - u
    slack = 1e-12 * max(1.0, float(np.max(np.abs(u))), float(np.max(np.abs(v))))
    hypotheses = bool(np.all(gap[outer] <= 0) and np.all(op.apply(gap)[inner] >= -slack / (op.r * op.r)))
    worst = float(np.max(gap))
    return ComparisonAudit(hypotheses_hold=hypotheses, holds=worst <= slack, worst_gap=worst)


def weak_pairing(
    space: SpaceHandle,
    u: ScalarField,
    phi: ScalarField,
    support: RegionSpec,
    schedule: RadiusSchedule,
    budget: EffortBudget | None = None,
    *,
    order: int = 16,
    settings: ConvergenceSettings | None = None,
) -> AmvResult:
    """``lim_r ∫ φ Δ_{μ,r} u dμ`` with the integral taken over ``support ⊇ supp φ``.

    The outer rule is split at every breakpoint ``b`` of ``u`` and at ``b ± r``
    where ``Δ_{μ,r} u`` has kinks.
    """
    if support.dim != space.ambient_dim:
        msg = "Support box dimension differs from the space"
        raise InputError(msg)
    trace: list[TracePoint] = []
    for r in schedule.radii:
        cuts = sorted({c for b in u.breakpoints for c in (b - r, b, b + r)})
        nodes, weights = space.integrator.region_rule(support, order, cuts)
        phi_values = phi(nodes) if len(nodes) else np.zeros(0)
        active = (weights != 0) & (phi_values != 0)
        total = 0.0
        error = 0.0
        for node, weight, value in zip(nodes[active], weights[active], phi_values[active]):
            lap, err = amv_at_radius(space, u, node, r, budget)
            total += weight * value * lap
            error += abs(weight * value) * err
        logger.debug("weak pairing r=%.4g: %.10g ± %.2g over %d nodes", r, total, error, int(active.sum()))
        trace.append(TracePoint(r, total, error))
    return AmvResult.from_fit(trace, fit_trace(trace, settings), "weak-pairing")


def sgn_amv(x: NDArray[np.float64] | float, r: float) -> NDArray[np.float64]:
    """Closed form of ``Δ_{μ,r} sgn`` on ``(R, d_e, L¹)``.

    ``(x + r)/r³`` on ``(-r, 0)``, ``(x - r)/r³`` on ``(0, r)`` and 0 elsewhere.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    left = (x > -r) & (x < 0)
    right = (x > 0) & (x < r)
    out[left] = (x[left] + r) / r**3
    out[right] = (x[right] - r) / r**3
    return out


def sgn_pairing_oracle(phi: t.Callable[[float], float], r: float) -> float:
    """``∫ φ Δ_{μ,r} sgn dx`` by adaptive quadrature of the closed form."""
    left, _ = integrate.quad(lambda s: phi(s) * (s + r) / r**3, -r, 0.0, epsabs=1e-14)
    right, _ = integrate.quad(lambda s: phi(s) * (s - r) / r**3, 0.0, r, epsabs=1e-14)
    return left + right


def export_triplets(op: DiscreteOperator, path: str | Path) -> Path:
    """Write ``row col value`` lines after a ``# rows cols nnz r kind`` header."""
    target = Path(path)
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = [f"# {op.size} {op.size} {coo.nnz} {op.r!r} {op.kind}"]
    lines.extend(f"{int(coo.row[k])} {int(coo.col[k])} {float(coo.data[k])!r}" for k in order)
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Wrote %s operator (%d entries) to %s", op.kind, coo.nnz, target)
    return target


def _operator(
    op_or_cloud: DiscreteOperator | AtomCloud,
    r: float | None,
    kind: str = "T_r",
) -> DiscreteOperator:
    if isinstance(op_or_cloud, DiscreteOperator):
        if r is not None and r != op_or_cloud.r:
            msg = f"Operator was built for r={op_or_cloud.r}, got r={r}"
            raise InputError(msg)
        if op_or_cloud.kind == kind:
            return op_or_cloud
        builder = build_amv_operator if kind == "Delta_r" else build_Tr
        return builder(op_or_cloud.cloud, op_or_cloud.r)
    if r is None:
        msg = "A radius is needed to build an operator from a cloud"
        raise InputError(msg)
    builder = build_amv_operator if kind == "Delta_r" else build_Tr
    return builder(op_or_cloud, r)
