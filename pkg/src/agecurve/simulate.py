"""Synthetic data generators with known ground truth.

Each generator returns the dataset plus a truth mapping (mean, eigenpairs,
scores, noise level, or cluster labels) so downstream estimates can be scored
against what actually produced the data. The rank-2 spline ensemble enforces
its structure exactly in sample terms: basis functions are orthonormalized
under the trapezoid quadrature that the dense-grid decomposition uses, and
scores are whitened to the exact target sample covariance.
"""

from __future__ import annotations

import numpy as np

from .basis import BasisSpec, eval_basis, make_basis
from .fpca import trapezoid_weights
from .smooth import PlayerSeries, SmoothedCurve

__all__ = [
    "rank2_spline_ensemble",
    "sparse_pace_dataset",
    "cluster_score_blobs",
    "two_group_scores",
]


def _default_spec() -> BasisSpec:
    return make_basis(3, (26, 28, 30, 32, 34), (24, 36))


def rank2_spline_ensemble(seed: int, n_subjects: int = 200, spec: BasisSpec | None = None,
                          grid_size: int = 201, eigenvalues=(4.0, 1.0)):
    """Spline curves mu + xi_1 phi_1 + xi_2 phi_2 with exact sample structure.

    phi_1, phi_2 are Gram-Schmidt orthonormalized in coefficient space under
    the quadrature Gram matrix of ``grid_size`` points, and the score matrix
    is centered and whitened so its sample covariance equals
    diag(eigenvalues) exactly. Returns (curves, truth) where truth carries
    the grid, mean values, eigenfunction values, eigenvalues, and scores.
    """
    spec = spec or _default_spec()
    rng = np.random.default_rng(seed)
    a, b = spec.domain
    grid = np.linspace(a, b, grid_size)
    w = trapezoid_weights(grid)
    Bg = eval_basis(spec, grid)
    M = Bg.T @ (Bg * w[:, None])

    def normalize(c):
        return c / np.sqrt(c @ M @ c)

    c1 = normalize(rng.normal(size=spec.dimension))
    c2 = rng.normal(size=spec.dimension)
    c2 = normalize(c2 - (c2 @ M @ c1) * c1)
    mu_coef = rng.normal(size=spec.dimension)

    raw = rng.normal(size=(n_subjects, 2))
    raw -= raw.mean(axis=0)
    cov = raw.T @ raw / (n_subjects - 1)
    L = np.linalg.cholesky(cov)
    scores = np.linalg.solve(L, raw.T).T * np.sqrt(np.asarray(eigenvalues))

    curves = []
    for i in range(n_subjects):
        coef = mu_coef + scores[i, 0] * c1 + scores[i, 1] * c2
        curves.append(SmoothedCurve(spec=spec, coefficients=coef, lam=0.0, subject_id=f"sim{i:04d}"))
    truth = {
        "grid": grid,
        "mean": Bg @ mu_coef,
        "eigenfunctions": np.vstack([Bg @ c1, Bg @ c2]),
        "eigenvalues": np.asarray(eigenvalues, dtype=float),
        "scores": scores,
    }
    return curves, truth


def _pace_mean(t):
    return 1.0 + 2.0 * t + np.sin(2 * np.pi * t)


def _pace_psi0(t):
    # constant, orthonormal on [0, 1]: a random per-subject level
    return np.ones_like(t)


def _pace_psi1(t):
    # shifted Legendre degree 1, orthonormal on [0, 1]
    return np.sqrt(3.0) * (2.0 * t - 1.0)


def _pace_psi2(t):
    # shifted Legendre degree 2, orthonormal on [0, 1]
    return np.sqrt(5.0) * (6.0 * t * t - 6.0 * t + 1.0)


def sparse_pace_dataset(seed: int, n_subjects: int = 200, sigma2: float = 0.25,
                        n_obs_range=(3, 8), lambdas=(2.0, 0.5),
                        eigenbasis: str = "poly"):
    """Sparse longitudinal draws from a low-rank model on [0, 1].

    Each subject gets n_i ~ uniform{n_obs_range} observation times drawn
    uniformly, values mu(t) + sum_k xi_k psi_k(t) + noise with
    xi_k ~ N(0, lambdas[k]) and noise variance sigma2. The rank is
    len(lambdas), at most 2. ``eigenbasis`` picks the orthonormal component
    shapes: "poly" uses linear then quadratic Legendre functions, "affine"
    uses a constant level plus a linear trend (subjects differ by a random
    intercept and slope). Returns (series_list, truth) where truth holds
    callables for mu/psi, plus the score matrix, lambdas, and sigma2.
    """
    rng = np.random.default_rng(seed)
    lo, hi = n_obs_range
    lambdas = np.asarray(lambdas, dtype=float)
    if eigenbasis == "poly":
        psi_fns = (_pace_psi1, _pace_psi2)[:lambdas.size]
    elif eigenbasis == "affine":
        psi_fns = (_pace_psi0, _pace_psi1)[:lambdas.size]
    else:
        raise ValueError(f"unknown eigenbasis {eigenbasis!r}")
    if lambdas.size > 2:
        raise ValueError("at most 2 components are available")
    series = []
    scores = rng.normal(size=(n_subjects, lambdas.size)) * np.sqrt(lambdas)
    for i in range(n_subjects):
        n_i = int(rng.integers(lo, hi + 1))
        t = np.sort(rng.uniform(0.0, 1.0, size=n_i))
        # collisions would violate strict monotonicity; nudge apart
        while np.any(np.diff(t) <= 0):
            t = np.sort(rng.uniform(0.0, 1.0, size=n_i))
        y = _pace_mean(t)
        for k, psi in enumerate(psi_fns):
            y = y + scores[i, k] * psi(t)
        if sigma2 > 0:
            y = y + rng.normal(0.0, np.sqrt(sigma2), size=n_i)
        series.append(PlayerSeries(id=f"sub{i:04d}", times=t, values=y))
    truth = {
        "mean_fn": _pace_mean,
        "psi_fns": psi_fns,
        "lambdas": lambdas,
        "scores": scores,
        "sigma2": float(sigma2),
    }
    return series, truth


def cluster_score_blobs(seed: int, sizes=(30, 30, 30), separation: float = 6.0,
                        dim: int = 3):
    """Three Gaussian blobs in score space, centers separated along axes.

    Within-cluster SD is 1; centers sit ``separation`` apart, so the blobs
    are cleanly separated at the default. Returns (X, labels, centers).
    """
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, dim))
    centers[1, 0] = separation
    centers[2, 1] = separation
    rows = []
    labels = []
    for k, size in enumerate(sizes):
        rows.append(centers[k] + rng.normal(size=(size, dim)))
        labels.extend([k] * size)
    X = np.vstack(rows)
    return X, np.asarray(labels), centers


def two_group_scores(seed: int, n_per_group: int = 40, shift: float = 0.0, dim: int = 1):
    """Two score samples, the second mean-shifted by ``shift`` in axis 0."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per_group, dim))
    b = rng.normal(size=(n_per_group, dim))
    b[:, 0] += shift
    return a, b
