"""Dense-grid functional PCA over an ensemble of smoothed curves.

Curves are evaluated on a shared grid, centered at the pointwise mean, and
column-weighted by square-root trapezoid quadrature weights so that the
eigenvectors of the weighted sample covariance turn into eigenfunctions that
are orthonormal under the quadrature inner product. Scores are quadrature
inner products of centered curves with the eigenfunctions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec
from .errors import BasisMismatch, InsufficientData, NumericalError
from .smooth import eval_curve

__all__ = [
    "FpcaModel",
    "trapezoid_weights",
    "default_grid",
    "mean_curve",
    "variance_curve",
    "fpca_decompose",
]


def trapezoid_weights(grid) -> np.ndarray:
    """Trapezoid quadrature weights for a strictly increasing grid."""
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ValueError("grid must be one-dimensional with at least 2 points")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    w = np.empty_like(g)
    w[0] = (g[1] - g[0]) / 2
    w[-1] = (g[-1] - g[-2]) / 2
    w[1:-1] = (g[2:] - g[:-2]) / 2
    return w


def default_grid(spec: BasisSpec, num: int = 201) -> np.ndarray:
    """Equally spaced evaluation grid over the basis domain."""
    a, b = spec.domain
    return np.linspace(a, b, num)


@dataclass(frozen=True, eq=False)
class FpcaModel:
    """Decomposition result: mean, eigenpairs, per-subject scores.

    Attributes
    ----------
    grid : (G,) array
    mean : (G,) array
    eigenfunctions : (K, G) array, orthonormal under trapezoid quadrature
    eigenvalues : (K,) array, descending, non-negative
    scores : (N, K) array
    varex : (K,) array, eigenvalue shares of the total variance
    """

    grid: np.ndarray
    mean: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    varex: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        if lam.size and lam.min() < 0:
            raise ValueError("eigenvalues must be non-negative after clamping")

    @property
    def num_components(self) -> int:
        return int(self.eigenvalues.size)


def _curve_matrix(curves, grid) -> np.ndarray:
    curves = list(curves)
    if not curves:
        raise InsufficientData("need at least one curve")
    spec = curves[0].spec
    for c in curves[1:]:
        if c.spec != spec:
            raise BasisMismatch("all curves must share one basis spec")
    g = np.asarray(grid, dtype=float)
    return np.vstack([eval_curve(c, g) for c in curves])


def mean_curve(curves, grid) -> np.ndarray:
    """Pointwise average of the curves on the grid."""
    return _curve_matrix(curves, grid).mean(axis=0)


def variance_curve(curves, grid) -> np.ndarray:
    """Pointwise sample variance (ddof 1) of the curves on the grid."""
    X = _curve_matrix(curves, grid)
    if X.shape[0] < 2:
        raise InsufficientData("variance needs at least 2 curves")
    return X.var(axis=0, ddof=1)


def _clamp_eigenvalues(lam: np.ndarray) -> np.ndarray:
    """Zero small negative eigenvalues; reject ones beyond roundoff scale.

    The threshold is relative to max(1, largest eigenvalue) so that
    large-scale data does not trip the guard on ordinary roundoff.
    """
    floor = -1e-10 * max(1.0, float(lam.max(initial=0.0)))
    if lam.min(initial=0.0) < floor:
        raise NumericalError(
            f"covariance eigenvalue {lam.min():g} below tolerance {floor:g}")
    return np.clip(lam, 0.0, None)


def _fix_signs(psi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Flip eigenfunction signs to a reproducible convention.

    Flip when the integral is negative; when the integral is within 1e-10 of
    zero, flip so the entry of largest magnitude is positive.
    """
    flips = np.ones(psi.shape[0])
    for k in range(psi.shape[0]):
        integral = float(w @ psi[k])
        if abs(integral) < 1e-10:
            if psi[k][np.argmax(np.abs(psi[k]))] < 0:
                flips[k] = -1.0
        elif integral < 0:
            flips[k] = -1.0
    return psi * flips[:, None]


def fpca_decompose(curves, grid, num_components: int | None = None) -> FpcaModel:
    """Functional PCA of smoothed curves on a shared grid.

    With ``num_components`` omitted, keeps the smallest K whose cumulative
    variance share reaches 0.99 (at least 1).
    """
    X = _curve_matrix(curves, grid)
    N, G = X.shape
    if N < 2:
        raise InsufficientData("functional PCA needs at least 2 curves")
    g = np.asarray(grid, dtype=float)
    w = trapezoid_weights(g)
    mu = X.mean(axis=0)
    Z = (X - mu) * np.sqrt(w)
    lam_all, V = np.linalg.eigh(Z.T @ Z / (N - 1))
    lam_all = _clamp_eigenvalues(lam_all)[::-1]
    V = V[:, ::-1]
    total = float(lam_all.sum())
    varex_all = lam_all / total if total > 0 else np.zeros_like(lam_all)

    max_k = min(N - 1, G)
    if num_components is None:
        if total > 0:
            K = int(np.searchsorted(np.cumsum(varex_all), 0.99) + 1)
        else:
            K = 1
        K = min(K, max_k)
    else:
        K = int(num_components)
        if not 1 <= K <= max_k:
            raise ValueError(f"num_components must lie in [1, {max_k}], got {K}")

    psi = (V[:, :K] / np.sqrt(w)[:, None]).T
    psi = _fix_signs(psi, w)
    scores = (X - mu) @ (psi * w).T
    return FpcaModel(
        grid=g,
        mean=mu,
        eigenfunctions=psi,
        eigenvalues=lam_all[:K],
        scores=scores,
        varex=varex_all[:K],
    )
