"""Gauss rules restricted to metric balls.

Every rule returns ``(nodes, weights)`` with ``nodes`` of shape ``(N, n)`` and
weights of shape ``(N,)``. Weights carry the geometric measure only (length,
area, volume); densities are applied by the strata.
"""

from __future__ import annotations

import functools
import typing as t

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq

if t.TYPE_CHECKING:
    from numpy.typing import NDArray

    Rule = t.Tuple[NDArray[np.float64], NDArray[np.float64]]

Box = t.Sequence[t.Tuple[float, float]]


@functools.lru_cache(maxsize=64)
def gauss_legendre(order: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def empty_rule(dim: int) -> Rule:
    """A rule with no nodes."""
    return np.zeros((0, dim)), np.zeros(0)


def interval_rule(
    a: float,
    b: float,
    order: int,
    breakpoints: t.Iterable[float] = (),
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Composite Gauss rule on [a, b], split at interior breakpoints.

    Returns 1-D node and weight arrays.
    """
    if not b > a:
        return np.zeros(0), np.zeros(0)
    cuts = sorted({a, b, *(p for p in breakpoints if a < p < b)})
    x, w = gauss_legendre(order)
    lo = np.asarray(cuts[:-1])[:, None]
    hi = np.asarray(cuts[1:])[:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + half * (x[None, :] + 1.0)).ravel()
    weights = (half * w[None, :]).ravel()
    return nodes, weights


def ball_rule_1d(
    center: float,
    r: float,
    order: int,
    breakpoints: t.Iterable[float] = (),
    box: tuple[float, float] | None = None,
) -> Rule:
    """Rule on the open interval (center - r, center + r), clipped to ``box``."""
    lo, hi = center - r, center + r
    if box is not None:
        lo, hi = max(lo, box[0]), min(hi, box[1])
    nodes, weights = interval_rule(lo, hi, order, breakpoints)
    return nodes[:, None], weights


def disk_rule(center: t.Sequence[float], r: float, order: int) -> Rule:
    """Polar product rule on a full disk.

    Radial Gauss with the ``rho`` Jacobian times a trapezoid rule in angle;
    polynomials of degree below ``2 * order - 1`` are integrated exactly.
    """
    x, w = gauss_legendre(order)
    rho = 0.5 * r * (x + 1.0)
    w_rho = 0.5 * r * w * rho
    n_theta = 2 * order
    theta = (np.arange(n_theta) + 0.5) * (2.0 * np.pi / n_theta)
    w_theta = 2.0 * np.pi / n_theta
    px = center[0] + rho[:, None] * np.cos(theta)[None, :]
    py = center[1] + rho[:, None] * np.sin(theta)[None, :]
    weights = np.broadcast_to(w_rho[:, None] * w_theta, px.shape)
    return np.column_stack([px.ravel(), py.ravel()]), weights.ravel().copy()


def disk_box_rule(
    center: t.Sequence[float],
    r: float,
    box: Box | None,
    order: int,
) -> Rule:
    """Rule on a disk intersected with an axis-aligned rectangle.

    Falls back to :func:`disk_rule` when the rectangle contains the disk.
    Otherwise substitutes ``x = x0 + r sin(theta)`` so the chord length is
    smooth in ``theta`` between breakpoints where the chord meets an edge.
    """
    x0, y0 = float(center[0]), float(center[1])
    if box is None or _box_contains_disk(box, x0, y0, r):
        return disk_rule(center, r, order)
    (ax, bx), (ay, by) = box
    xlo, xhi = max(ax, x0 - r), min(bx, x0 + r)
    if not xhi > xlo:
        return empty_rule(2)
    th_lo = float(np.arcsin(np.clip((xlo - x0) / r, -1.0, 1.0)))
    th_hi = float(np.arcsin(np.clip((xhi - x0) / r, -1.0, 1.0)))
    cuts = []
    for edge in (ay, by):
        if np.isfinite(edge) and abs(edge - y0) < r:
            half_angle = float(np.arccos(abs(edge - y0) / r))
            cuts.extend([-half_angle, half_angle])
    theta, w_theta = interval_rule(th_lo, th_hi, order, cuts)
    px = x0 + r * np.sin(theta)
    half_chord = r * np.cos(theta)
    ylo = np.maximum(ay, y0 - half_chord)
    yhi = np.minimum(by, y0 + half_chord)
    span = np.maximum(yhi - ylo, 0.0)
    xi, wi = gauss_legendre(order)
    py = ylo[:, None] + 0.5 * span[:, None] * (xi[None, :] + 1.0)
    weights = (w_theta * half_chord * 0.5 * span)[:, None] * wi[None, :]
    nodes = np.column_stack([np.repeat(px, order), py.ravel()])
    keep = weights.ravel() > 0.0
    return nodes[keep], weights.ravel()[keep]


def ball3_rule(center: t.Sequence[float], r: float, order: int) -> Rule:
    """Spherical product rule on a 3-ball."""
    x, w = gauss_legendre(order)
    rho = 0.5 * r * (x + 1.0)
    w_rho = 0.5 * r * w * rho**2
    cos_polar, w_polar = x, w
    n_phi = 2 * order
    phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
    w_phi = 2.0 * np.pi / n_phi
    rr, cc, pp = np.meshgrid(rho, cos_polar, phi, indexing="ij")
    ss = np.sqrt(1.0 - cc**2)
    nodes = np.column_stack(
        [
            (center[0] + rr * ss * np.cos(pp)).ravel(),
            (center[1] + rr * ss * np.sin(pp)).ravel(),
            (center[2] + rr * cc).ravel(),
        ],
    )
    weights = (w_rho[:, None, None] * w_polar[None, :, None] * w_phi) * np.ones_like(pp)
    return nodes, weights.ravel()


def segment_rule(
    start: t.Sequence[float],
    end: t.Sequence[float],
    center: t.Sequence[float],
    r: float,
    order: int,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Arclength rule on ``segment ∩ B_r(center)``.

    Returns ``(nodes, weights, params)`` where ``params`` is the arclength
    coordinate of each node measured from ``start``.
    """
    a = np.asarray(start, dtype=float)
    b = np.asarray(end, dtype=float)
    c = np.asarray(center, dtype=float)
    length = float(np.linalg.norm(b - a))
    tangent = (b - a) / length
    proj = float(np.dot(c - a, tangent))
    disc = proj**2 - float(np.dot(c - a, c - a)) + r * r
    if disc <= 0.0:
        return np.zeros((0, a.size)), np.zeros(0), np.zeros(0)
    root = float(np.sqrt(disc))
    s, w = interval_rule(max(0.0, proj - root), min(length, proj + root), order)
    return a[None, :] + s[:, None] * tangent[None, :], w, s


def arc_rule(
    circle_center: t.Sequence[float],
    radius: float,
    center: t.Sequence[float],
    r: float,
    order: int,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Arclength rule on ``circle ∩ B_r(center)`` for a full circle in the plane.

    Returns ``(nodes, weights, angles)``.
    """
    cc = np.asarray(circle_center, dtype=float)
    v = np.asarray(center, dtype=float) - cc
    dist = float(np.hypot(v[0], v[1]))
    # |c + R e(psi) - x|^2 < r^2  <=>  cos(psi - psi_v) > kappa
    if dist == 0.0:
        if radius < r:
            lo, hi = 0.0, 2.0 * np.pi
        else:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
    else:
        kappa = (radius**2 + dist**2 - r**2) / (2.0 * radius * dist)
        if kappa >= 1.0:
            return np.zeros((0, 2)), np.zeros(0), np.zeros(0)
        psi_v = float(np.arctan2(v[1], v[0]))
        half = np.pi if kappa <= -1.0 else float(np.arccos(kappa))
        lo, hi = psi_v - half, psi_v + half
    psi, w = interval_rule(lo, hi, order)
    nodes = cc[None, :] + radius * np.column_stack([np.cos(psi), np.sin(psi)])
    return nodes, radius * w, psi


def sign_intervals(
    func: t.Callable[[float], float],
    a: float,
    b: float,
    samples: int = 257,
) -> list[tuple[float, float]]:
    """Subintervals of [a, b] where ``func < 0``, ends refined with brentq."""
    grid = np.linspace(a, b, samples)
    values = np.array([func(float(s)) for s in grid])
    inside = values < 0.0
    pieces: list[tuple[float, float]] = []
    start: float | None = a if inside[0] else None
    for i in range(1, samples):
        if inside[i] == inside[i - 1]:
            continue
        root = brentq(func, grid[i - 1], grid[i], xtol=1e-15, rtol=4 * np.finfo(float).eps)
        if inside[i]:
            start = root
        elif start is not None:
            pieces.append((start, root))
            start = None
    if start is not None:
        pieces.append((start, b))
    return pieces


def _box_contains_disk(box: Box, x0: float, y0: float, r: float) -> bool:
    (ax, bx), (ay, by) = box
    return ax <= x0 - r and x0 + r <= bx and ay <= y0 - r and y0 + r <= by
