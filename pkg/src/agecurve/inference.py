"""Hypothesis tests on score vectors and count tables.

The permutation test pools two groups of PC scores, re-labels them
``replications`` times, and compares the absolute mean difference T against
its null draws. Each replication gets its own generator spawned from the
master seed, so results do not depend on execution order. Small pools
(default up to 10) are enumerated exactly instead of sampled. Classical
tests (Welch t, Pearson chi-square) and the Bonferroni threshold round out
the module.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import chdtrc, stdtr

from .errors import EmptyGroup, ZeroMargin

__all__ = [
    "PermTestResult",
    "TestResult",
    "statistic_T",
    "permutation_test",
    "t_test",
    "chi_square_independence",
    "bonferroni",
]

ALTERNATIVES = ("two-sided", "greater", "less")


@dataclass(frozen=True)
class PermTestResult:
    """Permutation test output: observed statistic, null draws, p, bookkeeping."""

    observed_T: float
    null_sample: np.ndarray
    p_value: float
    replications: int
    seed: int
    exact: bool = False
    strict: bool = False

    def __post_init__(self):
        null = np.asarray(self.null_sample, dtype=float)
        if null.size != self.replications:
            raise ValueError("null sample length must equal replications")
        object.__setattr__(self, "null_sample", null)


@dataclass(frozen=True)
class TestResult:
    """Classical test output: statistic, degrees of freedom, p, alternative."""

    statistic: float
    df: float
    p_value: float
    alternative: str


def _as_score_matrix(scores, name: str) -> np.ndarray:
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        raise EmptyGroup(f"group {name} is empty")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"group {name} must be a vector or a matrix of scores")
    return arr


def _mean_diff_norm(pool: np.ndarray, idx_p: np.ndarray, mask: np.ndarray) -> float:
    mask[:] = False
    mask[idx_p] = True
    diff = pool[mask].mean(axis=0) - pool[~mask].mean(axis=0)
    return float(np.sqrt(diff @ diff))


def statistic_T(p_scores, q_scores) -> float:
    """Absolute difference of group mean scores.

    One score per subject gives |mean(P) - mean(Q)|; a matrix of scores
    (subjects x components) gives the Euclidean norm of the mean-difference
    vector, which reduces to the same thing in one dimension.
    """
    p = _as_score_matrix(p_scores, "P")
    q = _as_score_matrix(q_scores, "Q")
    if p.shape[1] != q.shape[1]:
        raise ValueError("groups must have the same number of score components")
    diff = p.mean(axis=0) - q.mean(axis=0)
    return float(np.sqrt(diff @ diff))


def permutation_test(p_scores, q_scores, replications: int = 5000, seed: int = 0,
                     exact_threshold: int = 10, strict: bool = False) -> PermTestResult:
    """Two-sample permutation test of the mean-score difference.

    Draws ``replications`` independent random re-labelings of the pooled
    scores and recomputes T for each; p is the proportion of null draws
    >= T (or > T when ``strict``). When the pooled size is at most
    ``exact_threshold``, all distinct relabelings are enumerated instead
    (``exact_threshold=0`` forces sampling). Deterministic given ``seed``.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    p = _as_score_matrix(p_scores, "P")
    q = _as_score_matrix(q_scores, "Q")
    if p.shape[1] != q.shape[1]:
        raise ValueError("groups must have the same number of score components")
    pool = np.vstack([p, q])
    n_p, n = p.shape[0], pool.shape[0]
    observed = statistic_T(p, q)
    mask = np.empty(n, dtype=bool)

    if exact_threshold > 0 and n <= exact_threshold:
        null = np.empty(comb(n, n_p))
        for r, idx in enumerate(itertools.combinations(range(n), n_p)):
            null[r] = _mean_diff_norm(pool, np.asarray(idx), mask)
        effective = null.size
        exact = True
    else:
        children = np.random.SeedSequence(seed).spawn(replications)
        null = np.empty(replications)
        for r in range(replications):
            rng = np.random.default_rng(children[r])
            idx = np.sort(rng.permutation(n)[:n_p])
            null[r] = _mean_diff_norm(pool, idx, mask)
        effective = replications
        exact = False

    hits = int((null > observed).sum()) if strict else int((null >= observed).sum())
    return PermTestResult(
        observed_T=observed,
        null_sample=null,
        p_value=hits / effective,
        replications=effective,
        seed=seed,
        exact=exact,
        strict=strict,
    )


def t_test(a, b, alternative: str = "two-sided") -> TestResult:
    """Welch's two-sample t-test with Welch-Satterthwaite degrees of freedom."""
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}")
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.size < 2 or y.size < 2:
        raise ValueError("both samples need at least 2 observations")
    nx, ny = x.size, y.size
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    se2 = vx / nx + vy / ny
    if se2 == 0:
        # zero variance in both groups: defined only when the means agree
        stat = 0.0 if x.mean() == y.mean() else np.inf * np.sign(x.mean() - y.mean())
        df = float(nx + ny - 2)
    else:
        stat = float((x.mean() - y.mean()) / np.sqrt(se2))
        df = float(se2**2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1)))
    if alternative == "two-sided":
        p = 2 * float(stdtr(df, -abs(stat))) if np.isfinite(stat) else (1.0 if stat == 0 else 0.0)
        p = min(p, 1.0)
    elif alternative == "greater":
        p = float(stdtr(df, -stat)) if np.isfinite(stat) else (0.0 if stat > 0 else 1.0)
    else:
        p = float(stdtr(df, stat)) if np.isfinite(stat) else (0.0 if stat < 0 else 1.0)
    if stat == 0.0:
        p = 1.0 if alternative == "two-sided" else p
    return TestResult(statistic=float(stat), df=df, p_value=p, alternative=alternative)


def chi_square_independence(table) -> TestResult:
    """Pearson chi-square test of independence on a contingency table."""
    O = np.asarray(table, dtype=float)
    if O.ndim != 2 or O.shape[0] < 2 or O.shape[1] < 2:
        raise ValueError("table must be at least 2x2")
    if np.any(O < 0):
        raise ValueError("counts must be non-negative")
    rows = O.sum(axis=1)
    cols = O.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ZeroMargin("every row and column sum must be positive")
    E = np.outer(rows, cols) / O.sum()
    stat = float(((O - E) ** 2 / E).sum())
    df = float((O.shape[0] - 1) * (O.shape[1] - 1))
    return TestResult(statistic=stat, df=df, p_value=float(chdtrc(df, stat)),
                      alternative="greater")


def bonferroni(alpha: float, m: int) -> float:
    """Per-test threshold alpha / m."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be at least 1")
    return alpha / m
