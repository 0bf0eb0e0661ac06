"""Sparse functional PCA through conditional expectation.

Subjects observed at few, irregular times do not admit per-subject smoothing,
so the model is assembled from pooled information: a penalized-spline mean of
the pooled scatter, a covariance surface smoothed from off-diagonal raw
covariance products by a local linear kernel smoother (bandwidth picked by
5-fold cross-validation), a noise variance from the gap between the smoothed
diagonal and the surface, and eigenpairs of the quadrature-weighted surface.
Per-subject scores are best linear predictions

    xi_hat_k = lambda_k * psi_ik' Sigma_i^{-1} (y_i - mu_i),

where Sigma_i holds the covariance surface interpolated at the subject's
time pairs plus sigma2 on the diagonal. Curves are reconstructed on the
full domain from the scores, and the truncation order is selected by
leave-one-out prediction error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator

from .basis import eval_basis, make_basis, penalty_matrix
from .errors import (
    CovarianceUnidentified,
    CVUndefined,
    InsufficientData,
    NumericalError,
    OutOfDomain,
    SparseCoverage,
)
from .fpca import _fix_signs, trapezoid_weights
from .smooth import (
    PlayerSeries,
    _argmin_smallest_lambda,
    _fit_beta,
    _gcv_components,
    _penalty_root,
    default_lambda_grid,
)

log = logging.getLogger(__name__)

__all__ = ["PaceConfig", "PaceModel", "fit_pace", "conditional_scores",
           "reconstruct", "select_J_loocv"]

_COND_LIMIT = 1e12
_RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class PaceConfig:
    """Settings for the sparse decomposition.

    domain None infers the analysis interval from the pooled times.
    bandwidth_fractions are multiplied by the domain span to form the
    candidate kernel bandwidths.
    """

    domain: tuple[float, float] | None = None
    grid_size: int = 51
    bandwidth_fractions: tuple[float, ...] = (0.06, 0.09, 0.12)
    # the pooled diagonal is dense, so its 1-D smooth affords a narrow fixed
    # kernel; a wide one would leak curve curvature into the noise estimate
    diag_bandwidth_fraction: float = 0.02
    mean_degree: int = 3
    mean_interior_knots: int = 5
    lambda_grid: tuple[float, ...] | None = None
    central_fraction: float = 0.8
    coverage_fraction: float = 0.10
    J_max: int = 5
    cv_folds: int = 5
    # raw products are noisy enough that a single fold assignment makes the
    # bandwidth argmin a coin flip; averaging a few assignments settles it
    cv_repeats: int = 2
    cv_max_pairs: int = 1500
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 4:
            raise ValueError("grid_size must be at least 4")
        if not self.bandwidth_fractions or any(f <= 0 for f in self.bandwidth_fractions):
            raise ValueError("bandwidth_fractions must be positive")
        if self.diag_bandwidth_fraction <= 0:
            raise ValueError("diag_bandwidth_fraction must be positive")
        if not 0 < self.central_fraction <= 1:
            raise ValueError("central_fraction must lie in (0, 1]")
        if not 0 < self.coverage_fraction <= 1:
            raise ValueError("coverage_fraction must lie in (0, 1]")
        if self.J_max < 1:
            raise ValueError("J_max must be at least 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.cv_repeats < 1:
            raise ValueError("cv_repeats must be at least 1")
        if self.cv_max_pairs < self.cv_folds:
            raise ValueError("cv_max_pairs must be at least cv_folds")


class _TensorPchip:
    """Monotone cubic tensor-product interpolation of a gridded surface.

    Matches the two-stage scheme scipy's grid interpolator uses for its
    "pchip" method (rows interpolated at the second coordinate, then one
    spline down each intermediate column), but fits the second stage for
    every query point in a single vector-valued construction and evaluates
    its piecewise coefficients directly. A per-point loop over spline
    constructions is the dominant cost of scoring a few thousand time pairs;
    this path agrees with it to roundoff at a small fraction of the cost.
    """

    def __init__(self, grid: np.ndarray, values: np.ndarray):
        self.grid = grid
        self._rows = PchipInterpolator(grid, values, axis=1)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        u, v = pts[:, 0], pts[:, 1]
        mid = self._rows(v)
        cols = PchipInterpolator(self.grid, mid, axis=0)
        k = np.clip(np.searchsorted(self.grid, u, side="right") - 1,
                    0, self.grid.size - 2)
        s = u - self.grid[k]
        c = cols.c[:, k, np.arange(u.size)]
        return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]


@dataclass(frozen=True, eq=False)
class PaceModel:
    """Fitted sparse decomposition on a dense grid."""

    grid: np.ndarray
    mean: np.ndarray
    cov_surface: np.ndarray
    sigma2: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    J_selected: int
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        G = np.asarray(self.cov_surface)
        if np.abs(G - G.T).max() > 1e-10:
            raise ValueError("covariance surface must be symmetric")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        lam = np.asarray(self.eigenvalues)
        if np.any(np.diff(lam) > 0) or (lam.size and lam.min() < 0):
            raise ValueError("eigenvalues must be descending and non-negative")
        if not 1 <= self.J_selected <= lam.size:
            raise ValueError("J_selected must lie in [1, K]")

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    # interpolator construction is costly next to one subject's evaluation,
    # so the model builds each lazily and keeps it (the fields never change)
    @cached_property
    def _mean_interp(self):
        return PchipInterpolator(self.grid, self.mean)

    @cached_property
    def _psi_interp(self):
        return [PchipInterpolator(self.grid, p) for p in self.eigenfunctions]

    @cached_property
    def _surf_interp(self):
        return RegularGridInterpolator((self.grid, self.grid),
                                       self.cov_surface, method="pchip")


def _loclin_2d(tu, tv, tc, h, eu, ev, chunk=2048):
    """Locally weighted surface estimates at (eu, ev) from scattered products.

    The local model is linear in each coordinate with the du*dv interaction;
    the interaction term makes the fit exact for separable (product)
    surfaces even at domain corners, where a plain local plane picks up a
    bias proportional to the mixed derivative. Moments are accumulated in
    bandwidth units so the 4x4 normal systems stay well scaled; degenerate
    systems fall back to the local constant estimate.
    """
    out = np.empty(eu.size)
    for s in range(0, eu.size, chunk):
        du = (tu[None, :] - eu[s:s + chunk, None]) / h
        dv = (tv[None, :] - ev[s:s + chunk, None]) / h
        w = np.exp(-0.5 * (du * du + dv * dv))
        m = w.shape[0]
        p = du * dv
        S00 = w.sum(axis=1)
        tiny = S00 <= 1e-300
        norm = np.where(tiny, 1.0, S00)
        wn = w / norm[:, None]
        wu = wn * du
        wv = wn * dv
        wp = wn * p
        A = np.empty((m, 4, 4))
        A[:, 0, 0] = np.where(tiny, 0.0, 1.0)
        A[:, 0, 1] = A[:, 1, 0] = wu.sum(axis=1)
        A[:, 0, 2] = A[:, 2, 0] = wv.sum(axis=1)
        A[:, 0, 3] = A[:, 3, 0] = A[:, 1, 2] = A[:, 2, 1] = wp.sum(axis=1)
        A[:, 1, 1] = (wu * du).sum(axis=1)
        A[:, 2, 2] = (wv * dv).sum(axis=1)
        A[:, 1, 3] = A[:, 3, 1] = (wp * du).sum(axis=1)
        A[:, 2, 3] = A[:, 3, 2] = (wp * dv).sum(axis=1)
        A[:, 3, 3] = (wp * p).sum(axis=1)
        rhs = np.empty((m, 4))
        rhs[:, 0] = wn @ tc
        rhs[:, 1] = wu @ tc
        rhs[:, 2] = wv @ tc
        rhs[:, 3] = wp @ tc
        flat = rhs[:, 0].copy()
        safe = (~tiny) & (np.abs(np.linalg.det(A)) > 1e-10)
        A[~safe] = np.eye(4)
        rhs[~safe] = 0.0
        beta0 = np.linalg.solve(A, rhs[:, :, None])[:, 0, 0]
        out[s:s + chunk] = np.where(safe, beta0, flat)
    return out


def _loclin_1d(tx, tc, h, ex, base_w=None):
    """Local linear curve estimates at ex from scattered (tx, tc).

    base_w scales each point's kernel weight; the noise estimate uses it to
    give every subject the same share in the diagonal smooth as its pairs
    get in the surface smooth, so per-subject score fluctuations cancel in
    the difference of the two.
    """
    d = (tx[None, :] - ex[:, None]) / h
    w = np.exp(-0.5 * d * d)
    if base_w is not None:
        w = w * base_w[None, :]
    S0 = w.sum(axis=1)
    S1 = (w * d).sum(axis=1)
    S2 = (w * d * d).sum(axis=1)
    T0 = w @ tc
    T1 = (w * d) @ tc
    det = S0 * S2 - S1 * S1
    flat = np.divide(T0, S0, out=np.zeros_like(T0), where=S0 > 1e-300)
    safe = np.abs(det) > 1e-10 * np.maximum(S0, 1e-300) ** 2
    return np.where(safe, np.divide(S2 * T0 - S1 * T1, det, out=flat.copy(), where=safe), flat)


def _select_bandwidth(U, V, C, sid, fractions, span, folds, repeats, seed,
                      max_pairs):
    """Repeated k-fold CV over candidate bandwidths; ties go small.

    Folds are cut at the subject level: products from one subject share its
    score draws, so scattering them across train and test folds would leak
    that correlation and reward undersmoothing. Errors are summed over
    several independent fold assignments because a single assignment leaves
    the argmin at the mercy of product noise. Dense inputs are capped at
    max_pairs for the selection step (the final surface smooth always uses
    every pair); the subsample and every fold assignment come from the
    seeded generator, so selection is deterministic.
    """
    candidates = np.sort(np.asarray(fractions, dtype=float)) * span
    errors = np.zeros(candidates.size)
    if candidates.size == 1:
        return float(candidates[0]), errors
    rng = np.random.default_rng(seed)
    if U.size > max_pairs:
        pick = np.sort(rng.choice(U.size, size=max_pairs, replace=False))
        U, V, C, sid = U[pick], V[pick], C[pick], sid[pick]
    uids = np.unique(sid)
    for _ in range(repeats):
        fold_of = rng.permutation(uids.size)[np.searchsorted(uids, sid)] % folds
        for f in range(folds):
            test = fold_of == f
            train = ~test
            if not test.any() or not train.any():
                continue
            tu = np.concatenate([U[train], V[train]])
            tv = np.concatenate([V[train], U[train]])
            tc = np.concatenate([C[train], C[train]])
            for b, h in enumerate(candidates):
                pred = _loclin_2d(tu, tv, tc, h, U[test], V[test])
                errors[b] += float(((C[test] - pred) ** 2).sum())
    best = 0
    for b in range(1, candidates.size):
        if errors[b] < errors[best]:
            best = b
    return float(candidates[best]), errors


def _fit_pooled_mean(times, values, domain, config):
    a, b = domain
    interior = np.linspace(a, b, config.mean_interior_knots + 2)[1:-1]
    spec = make_basis(config.mean_degree, interior, (a, b))
    B = eval_basis(spec, times)
    P = penalty_matrix(spec)
    grid = np.asarray(config.lambda_grid, dtype=float) if config.lambda_grid is not None \
        else default_lambda_grid()
    n = values.size
    scores = np.empty(grid.size)
    for i, lam in enumerate(grid):
        sse, tr_h = _gcv_components(B, P, values, lam)
        scores[i] = np.inf if tr_h >= n - 1e-8 else n * sse / (n - tr_h) ** 2
    lam_star = _argmin_smallest_lambda(grid, scores)
    beta = _fit_beta(B, _penalty_root(P), values, lam_star)
    return spec, beta, lam_star


def fit_pace(data, config: PaceConfig = PaceConfig()) -> PaceModel:
    """Fit mean, covariance surface, noise variance, and eigenpairs.

    Raises
    ------
    InsufficientData
        Fewer than 2 subjects.
    SparseCoverage
        Pooled distinct times leave a gap wider than
        ``coverage_fraction`` of the domain.
    CovarianceUnidentified
        No subject contributes an off-diagonal pair (all n_i = 1).
    """
    data = list(data)
    if len(data) < 2:
        raise InsufficientData("sparse decomposition needs at least 2 subjects")
    pooled_t = np.concatenate([s.times for s in data])
    pooled_y = np.concatenate([s.values for s in data])
    domain = config.domain or (float(pooled_t.min()), float(pooled_t.max()))
    a, b = domain
    span = b - a
    if span <= 0:
        raise ValueError("domain must have positive length")
    distinct = np.unique(pooled_t)
    gaps = np.diff(np.concatenate([[a], distinct[(distinct >= a) & (distinct <= b)], [b]]))
    if gaps.size == 0 or gaps.max() >= config.coverage_fraction * span:
        raise SparseCoverage(
            f"largest gap between pooled times is {gaps.max():g}, above "
            f"{config.coverage_fraction:g} of the domain span {span:g}")

    mean_spec, mean_beta, lam_star = _fit_pooled_mean(pooled_t, pooled_y, domain, config)
    grid = np.linspace(a, b, config.grid_size)
    mean_vals = eval_basis(mean_spec, grid) @ mean_beta

    # raw covariance products from residuals, unordered off-diagonal pairs
    U, V, C, sid = [], [], [], []
    diag_t, diag_c, diag_w = [], [], []
    for i, s in enumerate(data):
        r = s.values - eval_basis(mean_spec, s.times) @ mean_beta
        n_i = len(s)
        diag_t.append(s.times)
        diag_c.append(r * r)
        # subject share n_i * (n_i - 1) matches its pair count in the surface
        diag_w.append(np.full(n_i, float(n_i - 1)))
        for j in range(n_i):
            for l in range(j + 1, n_i):
                U.append(s.times[j])
                V.append(s.times[l])
                C.append(r[j] * r[l])
                sid.append(i)
    if not U:
        raise CovarianceUnidentified(
            "no subject has 2 or more observations; covariance is unidentified")
    U = np.asarray(U)
    V = np.asarray(V)
    C = np.asarray(C)
    sid = np.asarray(sid)

    h, cv_errors = _select_bandwidth(U, V, C, sid, config.bandwidth_fractions,
                                     span, config.cv_folds, config.cv_repeats,
                                     config.seed, config.cv_max_pairs)
    tu = np.concatenate([U, V])
    tv = np.concatenate([V, U])
    tc = np.concatenate([C, C])
    # smooth on the upper triangle, mirror for exact symmetry
    iu, il = np.triu_indices(config.grid_size)
    vals = _loclin_2d(tu, tv, tc, h, grid[iu], grid[il])
    G = np.zeros((config.grid_size, config.grid_size))
    G[iu, il] = vals
    G[il, iu] = vals

    # noise: smoothed squared residuals minus the surface diagonal, averaged
    # over the central portion of the domain
    diag_t = np.concatenate(diag_t)
    diag_c = np.concatenate(diag_c)
    diag_w = np.concatenate(diag_w)
    V_hat = _loclin_1d(diag_t, diag_c, config.diag_bandwidth_fraction * span,
                       grid, base_w=diag_w)
    margin = (1.0 - config.central_fraction) / 2.0
    central = (grid >= a + margin * span) & (grid <= b - margin * span)
    sigma2_raw = float(np.mean(V_hat[central] - np.diag(G)[central]))
    sigma2 = max(sigma2_raw, 0.0)

    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    A = sw[:, None] * G * sw[None, :]
    lam_all, Vec = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(lam_all)[::-1]
    lam_all = lam_all[order]
    Vec = Vec[:, order]
    lam1 = lam_all[0] if lam_all.size else 0.0
    keep = lam_all > 1e-10 * max(lam1, 0.0)
    if not keep.any():
        keep = np.zeros_like(keep)
        keep[0] = True
    lam = np.clip(lam_all[keep], 0.0, None)
    psi = (Vec[:, keep] / sw[:, None]).T
    psi = _fix_signs(psi, w)
    gram = (psi * w) @ psi.T
    if np.abs(gram - np.eye(lam.size)).max() > 1e-8:
        raise NumericalError("eigenfunctions lost orthonormality under quadrature")

    # store the covariance implied by the retained eigenpairs: dropping the
    # negative part makes the surface positive semidefinite, so subject
    # covariance blocks interpolated from it stay invertible once sigma2 is
    # added, instead of inheriting the raw smooth's indefinite wiggles
    G_fit = (psi * lam[:, None]).T @ psi
    G_fit = 0.5 * (G_fit + G_fit.T)

    model = PaceModel(
        grid=grid,
        mean=mean_vals,
        cov_surface=G_fit,
        sigma2=sigma2,
        eigenvalues=lam,
        eigenfunctions=psi,
        J_selected=1,
        diagnostics={
            "bandwidth": h,
            "cv_errors": cv_errors,
            "mean_lambda": lam_star,
            "sigma2_raw": sigma2_raw,
            "n_pairs": int(U.size),
        },
    )
    # the presence of raw pairs guarantees a subject with n_i >= 2, so
    # leave-one-out selection is always defined here
    J_sel = select_J_loocv(model, data, min(config.J_max, model.K))
    return replace(model, J_selected=J_sel)


def _subject_arrays(model: PaceModel, times: np.ndarray):
    """Mean, eigenfunction, and covariance values at a subject's times.

    Model curves use monotone cubic interpolation on the dense grid; the
    covariance block comes from the matching tensor-product interpolation
    of the surface, symmetrized against roundoff.
    """
    a, b = model.domain
    if times.min() < a - 1e-12 or times.max() > b + 1e-12:
        raise OutOfDomain(f"subject times outside model domain [{a}, {b}]")
    t = np.clip(times, a, b)
    mu = model._mean_interp(t)
    Psi = np.vstack([p(t) for p in model._psi_interp])
    n = t.size
    pts = np.column_stack([np.repeat(t, n), np.tile(t, n)])
    Gsub = model._surf_interp(pts).reshape(n, n)
    Gsub = 0.5 * (Gsub + Gsub.T)
    return mu, Psi, Gsub


def _scores_from_arrays(lam, Psi, Gsub, sigma2, resid):
    """Best linear prediction of all K scores from interpolated arrays.

    The subject covariance does not depend on the truncation order, so the
    first J entries of the result are the J-component scores.
    """
    Sigma = Gsub + sigma2 * np.eye(resid.size)
    if np.linalg.cond(Sigma) > _COND_LIMIT:
        # a zero trace (all-degenerate model) still needs a positive ridge
        jitter = max(_RIDGE_SCALE * np.trace(Sigma) / resid.size, 1e-12)
        Sigma = Sigma + jitter * np.eye(resid.size)
        log.warning("subject covariance ill-conditioned; added ridge %.3e", jitter)
    return lam * (Psi @ np.linalg.solve(Sigma, resid))


def conditional_scores(model: PaceModel, series: PlayerSeries, J: int | None = None) -> np.ndarray:
    """Predicted scores xi_hat for one subject from its observations.

    Sigma_i holds the covariance surface interpolated at the subject's time
    pairs plus sigma2 on the diagonal, and is solved directly, never
    inverted. A condition number above 1e12 triggers a logged ridge repair.
    """
    J = model.J_selected if J is None else int(J)
    if not 1 <= J <= model.K:
        raise ValueError(f"J must lie in [1, {model.K}], got {J}")
    mu, Psi, Gsub = _subject_arrays(model, series.times)
    return _scores_from_arrays(model.eigenvalues, Psi, Gsub, model.sigma2,
                               series.values - mu)[:J]


def reconstruct(model: PaceModel, scores, grid=None) -> np.ndarray:
    """Full-domain curve mu + sum_k xi_k psi_k at the requested grid."""
    g = model.grid if grid is None else np.asarray(grid, dtype=float)
    a, b = model.domain
    if g.min() < a - 1e-12 or g.max() > b + 1e-12:
        raise OutOfDomain(f"reconstruction grid outside model domain [{a}, {b}]")
    xi = np.asarray(scores, dtype=float)
    if xi.size > model.K:
        raise ValueError(f"scores length {xi.size} exceeds {model.K} components")
    g = np.clip(g, a, b)
    out = PchipInterpolator(model.grid, model.mean)(g)
    for k in range(xi.size):
        out = out + xi[k] * PchipInterpolator(model.grid, model.eigenfunctions[k])(g)
    return out


def select_J_loocv(model: PaceModel, data, J_max: int) -> int:
    """Truncation order minimizing leave-one-out prediction error.

    Every observation of every subject with n_i >= 2 is held out once and
    predicted from the rest of that subject's observations; single-point
    subjects cannot be split and are skipped. Ties go to the smaller J.
    """
    if not 1 <= J_max <= model.K:
        raise ValueError(f"J_max must lie in [1, {model.K}], got {J_max}")
    usable = [s for s in data if len(s) >= 2]
    if not usable:
        raise CVUndefined("every subject has a single observation; nothing to hold out")
    if J_max == 1:
        return 1

    # one interpolation pass for all subjects: per-curve values on the pooled
    # times and one surface call on the stacked time-pair grids
    a, b = model.domain
    all_t = np.concatenate([s.times for s in usable])
    if all_t.min() < a - 1e-12 or all_t.max() > b + 1e-12:
        raise OutOfDomain(f"subject times outside model domain [{a}, {b}]")
    all_t = np.clip(all_t, a, b)
    mu_all = model._mean_interp(all_t)
    Psi_all = np.vstack([p(all_t) for p in model._psi_interp])
    splits = np.cumsum([len(s) for s in usable])[:-1]
    pts = np.concatenate([
        np.column_stack([np.repeat(t, t.size), np.tile(t, t.size)])
        for t in np.split(all_t, splits)])
    flat = model._surf_interp(pts)

    lam = model.eigenvalues
    errors = np.zeros(J_max)
    start = 0
    offset = 0
    for s in usable:
        n_i = len(s)
        mu = mu_all[start:start + n_i]
        Psi = Psi_all[:, start:start + n_i]
        Gsub = flat[offset:offset + n_i * n_i].reshape(n_i, n_i)
        Gsub = 0.5 * (Gsub + Gsub.T)
        start += n_i
        offset += n_i * n_i
        resid = s.values - mu
        for j in range(n_i):
            keep = np.arange(n_i) != j
            xi = _scores_from_arrays(lam, Psi[:, keep], Gsub[np.ix_(keep, keep)],
                                     model.sigma2, resid[keep])
            partial = np.cumsum(xi * Psi[:, j])
            for J in range(1, J_max + 1):
                pred = mu[j] + partial[J - 1]
                errors[J - 1] += (s.values[j] - pred) ** 2
    best = 0
    for J in range(1, J_max):
        if errors[J] < errors[best]:
            best = J
    return best + 1
