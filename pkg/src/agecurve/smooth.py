"""Penalized least-squares smoothing of per-subject series.

One curve is fit per subject by minimizing

    sum_k (y_k - sum_j beta_j B_j(t_k))^2 + lambda * int (f'')^2,

with the roughness weight ``lambda`` chosen by generalized cross-validation,
GCV(lambda) = n * SSE / (n - tr H)^2. Selection can be per subject or shared
across an ensemble (summed numerators, pooled trace). Fits go through a QR
solve of the augmented system [B; sqrt(lambda) * L] with L'L = P, which stays
accurate at extreme lambda where forming B'B + lambda*P would lose digits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .basis import BasisSpec, eval_basis, penalty_matrix
from .errors import BasisMismatch, InsufficientData, OutOfDomain, SingularFit

__all__ = [
    "PlayerSeries",
    "SmoothedCurve",
    "fit_penalized",
    "select_lambda_gcv",
    "select_lambda_gcv_shared",
    "demean",
    "eval_curve",
    "default_lambda_grid",
]


@dataclass(frozen=True, eq=False)
class PlayerSeries:
    """One subject's observations: strictly increasing times, matching values."""

    id: str
    times: np.ndarray
    values: np.ndarray
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or y.ndim != 1:
            raise ValueError("times and values must be one-dimensional")
        if t.size != y.size:
            raise ValueError(f"times ({t.size}) and values ({y.size}) differ in length")
        if t.size < 1:
            raise ValueError("series must contain at least one observation")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        t.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True, eq=False)
class SmoothedCurve:
    """A fitted spline: basis spec, coefficient vector, penalty weight used."""

    spec: BasisSpec
    coefficients: np.ndarray
    lam: float
    subject_id: str

    def __post_init__(self):
        beta = np.asarray(self.coefficients, dtype=float)
        if beta.shape != (self.spec.dimension,):
            raise BasisMismatch(
                f"coefficient length {beta.shape} does not match basis dimension {self.spec.dimension}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        beta.flags.writeable = False
        object.__setattr__(self, "coefficients", beta)

    def __call__(self, t, deriv_order: int = 0):
        return eval_curve(self, t, deriv_order)


def default_lambda_grid() -> np.ndarray:
    """61 log-spaced penalty weights covering 1e-6 .. 1e6."""
    return np.logspace(-6, 6, 61)


def _penalty_root(P: np.ndarray) -> np.ndarray:
    """Symmetric square root L with L @ L = P (P is PSD up to roundoff).

    Eigenvalues below 1e-12 of the largest are zeroed: spurious positive
    roundoff eigenvalues would otherwise be inflated by sqrt(lambda) in the
    augmented system and bias heavy-penalty fits.
    """
    w, V = np.linalg.eigh(P)
    w[w < 1e-12 * max(w.max(), 0.0)] = 0.0
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def _fit_beta(B: np.ndarray, L: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    J = B.shape[1]
    if lam > 0:
        A = np.vstack([B, np.sqrt(lam) * L])
        rhs = np.concatenate([y, np.zeros(J)])
    else:
        A, rhs = B, y
    beta, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < J:
        raise SingularFit(
            f"penalized system is rank deficient (rank {rank} < {J}); "
            "more observations or a positive lambda are needed")
    return beta


def _gcv_components(B: np.ndarray, P: np.ndarray, y: np.ndarray, lam: float):
    """(SSE, tr H) at one lambda, or (inf, inf) when the system degenerates."""
    M = B.T @ B + lam * P
    try:
        X = np.linalg.solve(M, B.T)
    except np.linalg.LinAlgError:
        return np.inf, np.inf
    tr_h = float((B.T * X).sum())
    resid = y - B @ (X @ y)
    return float(resid @ resid), tr_h


def _check_series(spec: BasisSpec, series: PlayerSeries) -> None:
    a, b = spec.domain
    t = series.times
    if t.min() < a or t.max() > b:
        bad = t[(t < a) | (t > b)][0]
        raise OutOfDomain(f"observation time {bad} outside basis domain [{a}, {b}]")
    if len(series) < 2:
        raise InsufficientData(
            f"series {series.id!r} has {len(series)} observation(s); smoothing needs at least 2")


def fit_penalized(spec: BasisSpec, series: PlayerSeries, lam: float) -> SmoothedCurve:
    """Fit one penalized spline to one series at a fixed penalty weight.

    Raises
    ------
    SingularFit
        If the (augmented) design is rank deficient, e.g. lambda = 0 with
        fewer observations than basis functions.
    OutOfDomain
        If any observation time falls outside the basis domain.
    InsufficientData
        If the series has fewer than 2 observations.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    _check_series(spec, series)
    B = eval_basis(spec, series.times)
    L = _penalty_root(penalty_matrix(spec))
    beta = _fit_beta(B, L, series.values, lam)
    return SmoothedCurve(spec=spec, coefficients=beta, lam=float(lam), subject_id=series.id)


def _validated_grid(lambda_grid) -> np.ndarray:
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("lambda grid must be non-empty")
    if np.any(grid <= 0):
        raise ValueError("lambda grid entries must be positive")
    return grid


def _argmin_smallest_lambda(grid: np.ndarray, scores: np.ndarray) -> float:
    order = np.argsort(grid, kind="stable")
    best = order[0]
    for i in order[1:]:
        if scores[i] < scores[best]:
            best = i
    return float(grid[best])


def select_lambda_gcv(spec: BasisSpec, series: PlayerSeries, lambda_grid=None):
    """Pick the grid lambda minimizing GCV for one series.

    Returns (lambda_star, scores) with scores aligned to the input grid.
    Grid points where tr H reaches n (within 1e-8) score +inf; ties go to
    the smaller lambda.
    """
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    grid = _validated_grid(lambda_grid)
    _check_series(spec, series)
    B = eval_basis(spec, series.times)
    P = penalty_matrix(spec)
    y = series.values
    n = y.size
    scores = np.empty(grid.size)
    for i, lam in enumerate(grid):
        sse, tr_h = _gcv_components(B, P, y, lam)
        scores[i] = np.inf if tr_h >= n - 1e-8 else n * sse / (n - tr_h) ** 2
    return _argmin_smallest_lambda(grid, scores), scores


def select_lambda_gcv_shared(spec: BasisSpec, series_list, lambda_grid=None):
    """Pick one lambda for a whole ensemble.

    The score at each lambda sums the per-subject GCV numerators n_i * SSE_i
    and pools the traces: sum_i n_i * SSE_i / (sum_i n_i - sum_i tr H_i)^2.
    """
    if lambda_grid is None:
        lambda_grid = default_lambda_grid()
    grid = _validated_grid(lambda_grid)
    series_list = list(series_list)
    if not series_list:
        raise ValueError("series list must be non-empty")
    P = penalty_matrix(spec)
    designs = []
    for series in series_list:
        _check_series(spec, series)
        designs.append((eval_basis(spec, series.times), series.values))
    n_total = sum(y.size for _, y in designs)
    scores = np.empty(grid.size)
    for i, lam in enumerate(grid):
        num = 0.0
        trace = 0.0
        for B, y in designs:
            sse, tr_h = _gcv_components(B, P, y, lam)
            num += y.size * sse
            trace += tr_h
        scores[i] = np.inf if trace >= n_total - 1e-8 else num / (n_total - trace) ** 2
    return _argmin_smallest_lambda(grid, scores), scores


def demean(series: PlayerSeries) -> PlayerSeries:
    """Subtract the subject's own mean from the values; times and meta kept."""
    centered = series.values - series.values.mean()
    return PlayerSeries(id=series.id, times=series.times, values=centered, meta=series.meta)


def eval_curve(curve: SmoothedCurve, grid, deriv_order: int = 0) -> np.ndarray:
    """Evaluate the fitted curve (or a derivative) on a grid of times."""
    return eval_basis(curve.spec, grid, deriv_order) @ curve.coefficients
