"""k-means on score vectors and cluster-count selection.

The number of clusters is chosen the way the source analysis reads its SSE
plots: run k-means for each candidate k on the real scores, rebuild the SSE
curve on column-permuted scores (each coordinate shuffled independently
across subjects, destroying joint structure while keeping marginals), and
pick the k where the real curve drops furthest below the permuted ones on
the log scale. Restarts and permutation runs draw their generators from
spawned seed sequences, so results do not depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InvalidK

__all__ = [
    "KmeansResult",
    "NullReference",
    "ClusterReport",
    "kmeans",
    "null_sse_reference",
    "select_k",
    "cluster_report",
]

_MAX_ITER = 300


@dataclass(frozen=True, eq=False)
class KmeansResult:
    """Best-of-restarts k-means run: labels, centroids, final and per-iteration SSE."""

    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: np.ndarray


@dataclass(frozen=True, eq=False)
class NullReference:
    """Per-k SSE of column-permuted score matrices over repeated runs."""

    k_range: tuple[int, ...]
    min_sse: np.ndarray
    mean_sse: np.ndarray
    all_sse: np.ndarray  # runs x len(k_range)


@dataclass(frozen=True, eq=False)
class ClusterReport:
    """Everything the selection produced, ready for serialization."""

    k_range: tuple[int, ...]
    actual_sse: np.ndarray
    log_actual_sse: np.ndarray
    null_min_sse: np.ndarray
    null_mean_sse: np.ndarray
    gap_min: np.ndarray
    gap_mean: np.ndarray
    selected_k: int
    disagreement: bool
    no_structure: bool
    assignments: Mapping
    centroids: np.ndarray
    runs: int
    restarts: int
    seed: int
    sse_history: np.ndarray


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers by squared-distance sampling."""
    N = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(N)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(N, p=d2 / total)
        else:
            idx = rng.integers(N)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray, k: int):
    """Lloyd iterations until stable labels or the iteration cap."""
    N = X.shape[0]
    labels = np.full(N, -1)
    history = []
    for _ in range(_MAX_ITER):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        own = d2[np.arange(N), new_labels].copy()
        for empty in np.setdiff1d(np.arange(k), new_labels):
            far = int(np.argmax(own))
            new_labels[far] = empty
            own[far] = -np.inf
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
        sse = float(((X - centers[labels]) ** 2).sum())
        # Lloyd monotonicity; tolerance covers roundoff only
        assert not history or sse <= history[-1] + 1e-9 * max(1.0, history[-1]), \
            "SSE increased across a Lloyd iteration"
        history.append(sse)
    return labels, centers, history[-1], np.asarray(history)


def kmeans(points, k: int, restarts: int = 25, seed=0) -> KmeansResult:
    """Best of ``restarts`` k-means++ runs; deterministic given seed.

    Raises
    ------
    InvalidK
        If k is outside [1, N].
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if not 1 <= k <= N:
        raise InvalidK(f"k must lie in [1, {N}], got {k}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    best = None
    for child in _as_seed_sequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        centers = _plus_plus_init(X, k, rng)
        labels, centers, sse, history = _lloyd(X, centers.copy(), k)
        if best is None or sse < best.sse:
            best = KmeansResult(assignments=labels, centroids=centers, sse=sse,
                                sse_history=history)
    return best


def null_sse_reference(points, k_range, runs: int = 250, restarts: int = 25,
                       seed=0) -> NullReference:
    """SSE-vs-k on column-permuted copies of the scores.

    Each run shuffles every coordinate independently across subjects and
    reruns k-means for all k; min and mean per k summarize the runs.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if runs < 1:
        raise ValueError("runs must be at least 1")
    k_range = tuple(int(k) for k in k_range)
    all_sse = np.empty((runs, len(k_range)))
    for r, child in enumerate(_as_seed_sequence(seed).spawn(runs)):
        perm_ss, km_ss = child.spawn(2)
        rng = np.random.default_rng(perm_ss)
        permuted = np.column_stack([X[rng.permutation(X.shape[0]), d]
                                    for d in range(X.shape[1])])
        for i, (k, km_child) in enumerate(zip(k_range, km_ss.spawn(len(k_range)))):
            all_sse[r, i] = kmeans(permuted, k, restarts=restarts, seed=km_child).sse
    return NullReference(
        k_range=k_range,
        min_sse=all_sse.min(axis=0),
        mean_sse=all_sse.mean(axis=0),
        all_sse=all_sse,
    )


def _argmax_smallest_k(gaps: np.ndarray, k_range) -> int:
    best = gaps.max()
    for k, g in zip(k_range, gaps):
        if g >= best - 1e-9:
            return int(k)
    return int(k_range[0])


def select_k(actual_sse, null_min_sse, null_mean_sse, k_range):
    """Pick k by the largest log-scale gap between null and actual SSE.

    Returns (selected_k, tables) where tables carries both gap curves, the
    per-curve winners, a disagreement flag when they differ, and a
    no-structure flag when no gap exceeds 1e-9. Ties within 1e-9 go to the
    smallest k.
    """
    actual = np.asarray(actual_sse, dtype=float)
    null_min = np.asarray(null_min_sse, dtype=float)
    null_mean = np.asarray(null_mean_sse, dtype=float)
    k_range = tuple(int(k) for k in k_range)
    if not (len(actual) == len(null_min) == len(null_mean) == len(k_range)):
        raise ValueError("actual, null_min, null_mean, and k_range must align")
    with np.errstate(divide="ignore"):
        gap_min = np.log(null_min) - np.log(actual)
        gap_mean = np.log(null_mean) - np.log(actual)
    selected = _argmax_smallest_k(gap_mean, k_range)
    min_winner = _argmax_smallest_k(gap_min, k_range)
    tables = {
        "k_range": k_range,
        "gap_mean": gap_mean,
        "gap_min": gap_min,
        "selected_k_mean": selected,
        "selected_k_min": min_winner,
        "disagreement": min_winner != selected,
        "no_structure": bool(gap_mean.max() <= 1e-9),
    }
    return selected, tables


def cluster_report(points, k_range, runs: int = 250, restarts: int = 25, seed=0,
                   ids=None) -> ClusterReport:
    """Full selection pipeline: actual SSE curve, null reference, chosen k.

    ``ids`` labels the subjects in the assignment map; row indices are used
    when omitted.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    k_range = tuple(int(k) for k in k_range)
    if ids is None:
        ids = list(range(X.shape[0]))
    ids = list(ids)
    if len(ids) != X.shape[0]:
        raise ValueError("ids length must match the number of score rows")
    ss = _as_seed_sequence(seed)
    actual_ss, null_ss = ss.spawn(2)
    fits = {k: kmeans(X, k, restarts=restarts, seed=child)
            for k, child in zip(k_range, actual_ss.spawn(len(k_range)))}
    actual = np.asarray([fits[k].sse for k in k_range])
    null = null_sse_reference(X, k_range, runs=runs, restarts=restarts, seed=null_ss)
    selected, tables = select_k(actual, null.min_sse, null.mean_sse, k_range)
    winner = fits[selected]
    with np.errstate(divide="ignore"):
        log_actual = np.log(actual)
    return ClusterReport(
        k_range=k_range,
        actual_sse=actual,
        log_actual_sse=log_actual,
        null_min_sse=null.min_sse,
        null_mean_sse=null.mean_sse,
        gap_min=tables["gap_min"],
        gap_mean=tables["gap_mean"],
        selected_k=selected,
        disagreement=tables["disagreement"],
        no_structure=tables["no_structure"],
        assignments={sid: int(lab) for sid, lab in zip(ids, winner.assignments)},
        centroids=winner.centroids,
        runs=runs,
        restarts=restarts,
        seed=seed if isinstance(seed, int) else -1,
        sse_history=winner.sse_history,
    )
