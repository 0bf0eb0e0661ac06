"""Clamped B-spline bases: construction, evaluation, and curvature penalty.

A basis of polynomial degree ``k`` with ``m`` interior knots on ``[a, b]``
has dimension ``J = k + 1 + m``. Boundary knots are replicated ``k + 1``
times so the basis spans endpoint values and reproduces every polynomial of
degree <= k on the domain. Evaluation uses the Cox-de Boor recursion; the
right endpoint is handled by the left-limit convention so the last basis
function evaluates to 1 there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidKnots, OutOfDomain

__all__ = ["BasisSpec", "make_basis", "eval_basis", "penalty_matrix"]


@dataclass(frozen=True)
class BasisSpec:
    """Immutable description of one clamped B-spline basis.

    Attributes
    ----------
    degree : int
        Polynomial degree of each piece.
    interior_knots : tuple of float
        Strictly increasing knots strictly inside the endpoints.
    endpoints : (float, float)
        Domain boundaries; replicated degree+1 times in ``knots``.
    knots : np.ndarray
        Full clamped knot vector of length ``dimension + degree + 1``.
    """

    degree: int
    interior_knots: tuple[float, ...]
    endpoints: tuple[float, float]
    knots: np.ndarray = field(compare=False, repr=False)

    @property
    def dimension(self) -> int:
        return self.degree + 1 + len(self.interior_knots)

    @property
    def domain(self) -> tuple[float, float]:
        return self.endpoints

    def breakpoints(self) -> np.ndarray:
        """Distinct knots: endpoints plus interior knots, increasing."""
        a, b = self.endpoints
        return np.asarray([a, *self.interior_knots, b], dtype=float)


def make_basis(degree: int,
               interior_knots: "list[float] | tuple[float, ...]",
               endpoints: tuple[float, float]) -> BasisSpec:
    """Build a clamped B-spline basis spec.

    Raises
    ------
    InvalidKnots
        If the knot sequence is not strictly increasing or an interior knot
        lies outside the open interval between the endpoints.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    a, b = float(endpoints[0]), float(endpoints[1])
    interior = tuple(float(t) for t in interior_knots)
    if not a < b:
        raise InvalidKnots(f"endpoints must satisfy a < b, got ({a}, {b})")
    full = np.asarray([a, *interior, b], dtype=float)
    if np.any(np.diff(full) <= 0):
        raise InvalidKnots("knot sequence (endpoints and interior knots) must be strictly increasing")
    knots = np.concatenate([np.full(degree + 1, a), np.asarray(interior, dtype=float), np.full(degree + 1, b)])
    knots.flags.writeable = False
    return BasisSpec(degree=degree, interior_knots=interior, endpoints=(a, b), knots=knots)


def eval_basis(spec: BasisSpec, t, deriv_order: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative) at ``t``.

    Parameters
    ----------
    spec : BasisSpec
    t : float or array of float
        Points inside ``spec.domain``.
    deriv_order : int
        Derivative order ``r`` with ``0 <= r <= degree + 1``. Orders above
        the degree return zeros (the derivative vanishes almost everywhere).

    Returns
    -------
    np.ndarray
        Shape ``(J,)`` for scalar ``t``, else ``(len(t), J)``.
    """
    if deriv_order < 0 or deriv_order > spec.degree + 1:
        raise ValueError(f"deriv_order must lie in [0, degree + 1] = [0, {spec.degree + 1}]")
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    pts = np.atleast_1d(arr)
    a, b = spec.endpoints
    if pts.size and (pts.min() < a or pts.max() > b):
        bad = pts[(pts < a) | (pts > b)][0]
        raise OutOfDomain(f"point {bad} outside basis domain [{a}, {b}]")
    out = _design(spec.knots, spec.degree, pts, deriv_order)
    return out[0] if scalar else out


def _design(knots: np.ndarray, degree: int, pts: np.ndarray, deriv_order: int) -> np.ndarray:
    """Cox-de Boor values/derivatives for all J functions at all points."""
    J = len(knots) - degree - 1
    n = pts.shape[0]
    if deriv_order > degree:
        return np.zeros((n, J))

    # Degree-0 indicators, right-closed on the last nonempty interval so the
    # basis is evaluated by left limit at the right endpoint.
    left, right = knots[:-1], knots[1:]
    vals = ((left[None, :] <= pts[:, None]) & (pts[:, None] < right[None, :])).astype(float)
    nonempty = np.nonzero(left < right)[0]
    if nonempty.size:
        last = nonempty[-1]
        vals[pts == knots[-1], last] = 1.0

    base_degree = degree - deriv_order
    for q in range(1, base_degree + 1):
        vals = _raise_degree(knots, q, vals, pts, differentiate=False)
    for m in range(1, deriv_order + 1):
        vals = _raise_degree(knots, base_degree + m, vals, pts, differentiate=True)
    return vals


def _raise_degree(knots: np.ndarray, q: int, lower: np.ndarray, pts: np.ndarray,
                  differentiate: bool) -> np.ndarray:
    """One Cox-de Boor step from degree q-1 to q (values or derivative)."""
    count = len(knots) - q - 1
    d1 = knots[q:q + count] - knots[:count]
    d2 = knots[q + 1:q + 1 + count] - knots[1:1 + count]
    inv1 = np.divide(1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
    inv2 = np.divide(1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
    if differentiate:
        return q * (lower[:, :count] * inv1 - lower[:, 1:1 + count] * inv2)
    w1 = (pts[:, None] - knots[None, :count]) * inv1
    w2 = (knots[None, q + 1:q + 1 + count] - pts[:, None]) * inv2
    return lower[:, :count] * w1 + lower[:, 1:1 + count] * w2


def penalty_matrix(spec: BasisSpec) -> np.ndarray:
    """Matrix of integrated products of second derivatives.

    Entry (j, l) is the integral of ``B_j'' * B_l''`` over the domain,
    computed exactly by Gauss-Legendre quadrature on each inter-knot
    interval (the integrand is piecewise polynomial of degree
    ``2 * (degree - 2)``). Symmetric positive semidefinite; constant and
    linear coefficient vectors lie in its null space.
    """
    J = spec.dimension
    if spec.degree < 2:
        return np.zeros((J, J))
    poly_degree = 2 * (spec.degree - 2)
    n_nodes = int(np.ceil((poly_degree + 1) / 2)) + 1
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    breaks = spec.breakpoints()
    P = np.zeros((J, J))
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        ts = mid + half * nodes
        D2 = _design(spec.knots, spec.degree, ts, 2)
        P += (D2 * (weights * half)[:, None]).T @ D2
    return 0.5 * (P + P.T)
