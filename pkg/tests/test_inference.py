"""Hypothesis test checks.

The Monte-Carlo permutation p is compared against exhaustive enumeration on
small pools, its type-I level against a 500-dataset null simulation, and the
classical tests against direct-formula computations plus scipy.stats as an
independent implementation.
"""

import itertools
from math import comb

import numpy as np
import pytest
from scipy import stats

from agecurve.errors import EmptyGroup, ZeroMargin
from agecurve.inference import (
    bonferroni,
    chi_square_independence,
    permutation_test,
    statistic_T,
    t_test,
)


def enumerate_p(p_scores, q_scores):
    """Exhaustive permutation p by definition, written independently."""
    pool = list(p_scores) + list(q_scores)
    n_p = len(p_scores)
    obs = abs(np.mean(p_scores) - np.mean(q_scores))
    hits = total = 0
    for idx in itertools.combinations(range(len(pool)), n_p):
        chosen = [pool[i] for i in idx]
        rest = [pool[i] for i in range(len(pool)) if i not in idx]
        if abs(np.mean(chosen) - np.mean(rest)) >= obs - 1e-12:
            hits += 1
        total += 1
    return hits / total


def test_statistic_examples():
    assert statistic_T([1, 2, 3], [4, 5]) == 2.5
    assert statistic_T([1.0, 2.0], [1.0, 2.0]) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(5):
        a, b = rng.normal(size=6), rng.normal(size=4)
        assert statistic_T(a, b) == statistic_T(b, a)
    with pytest.raises(EmptyGroup):
        statistic_T([], [1.0])
    with pytest.raises(EmptyGroup):
        statistic_T([1.0], [])


def test_statistic_multi_component():
    a = np.array([[1.0, 0.0], [3.0, 2.0]])
    b = np.array([[0.0, 0.0], [0.0, 0.0]])
    # mean difference (2, 1) -> norm sqrt(5)
    assert abs(statistic_T(a, b) - np.sqrt(5)) < 1e-12


def test_small_pool_uses_exact_enumeration():
    res = permutation_test([0.0, 0.0], [10.0, 10.0], replications=100000, seed=5)
    assert res.exact
    assert res.replications == comb(4, 2)
    assert res.p_value == enumerate_p([0.0, 0.0], [10.0, 10.0]) == pytest.approx(1 / 3)


def test_monte_carlo_close_to_enumeration():
    a, b = [0.0, 0.0], [10.0, 10.0]
    exact = enumerate_p(a, b)
    res = permutation_test(a, b, replications=100000, seed=11, exact_threshold=0)
    assert not res.exact
    assert abs(res.p_value - exact) < 0.01
    rng = np.random.default_rng(19)
    a = rng.normal(size=4)
    b = rng.normal(size=4) + 1.0
    exact = enumerate_p(a, b)
    res = permutation_test(a, b, replications=100000, seed=13, exact_threshold=0)
    assert abs(res.p_value - exact) < 0.01


def test_degenerate_pool():
    res = permutation_test([2.0, 2.0, 2.0], [2.0] * 5, replications=64, seed=0,
                           exact_threshold=0)
    assert res.observed_T == 0.0
    assert np.all(res.null_sample == 0.0)
    assert res.p_value == 1.0
    strict = permutation_test([2.0, 2.0, 2.0], [2.0] * 5, replications=64, seed=0,
                              exact_threshold=0, strict=True)
    assert strict.p_value == 0.0


def test_p_value_is_multiple_of_inverse_replications():
    rng = np.random.default_rng(3)
    res = permutation_test(rng.normal(size=12), rng.normal(size=9),
                           replications=257, seed=21)
    assert res.p_value * res.replications == round(res.p_value * res.replications)
    assert res.null_sample.shape == (257,)


def test_seed_determinism():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=15), rng.normal(size=15)
    r1 = permutation_test(a, b, replications=500, seed=42)
    r2 = permutation_test(a, b, replications=500, seed=42)
    assert r1.p_value == r2.p_value
    assert np.array_equal(r1.null_sample, r2.null_sample)
    r3 = permutation_test(a, b, replications=500, seed=43)
    assert not np.array_equal(r1.null_sample, r3.null_sample)


def test_affine_invariance():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=14), rng.normal(size=11)
    base = permutation_test(a, b, replications=800, seed=9)
    moved = permutation_test(3.0 * a + 7.0, 3.0 * b + 7.0, replications=800, seed=9)
    assert base.p_value == moved.p_value


def test_type_i_level():
    master = np.random.SeedSequence(987654)
    pvals = []
    for i, child in enumerate(master.spawn(500)):
        rng = np.random.default_rng(child)
        a, b = rng.normal(size=50), rng.normal(size=50)
        res = permutation_test(a, b, replications=400, seed=i)
        pvals.append(res.p_value)
    frac = float(np.mean(np.asarray(pvals) < 0.05))
    assert 0.03 <= frac <= 0.08


def test_multi_component_permutation_runs():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(10, 3))
    b = rng.normal(size=(8, 3))
    res = permutation_test(a, b, replications=300, seed=2)
    assert 0.0 <= res.p_value <= 1.0
    # a single column must agree exactly with the 1-D path
    r1 = permutation_test(a[:, 0], b[:, 0], replications=300, seed=2)
    r2 = permutation_test(a[:, :1], b[:, :1], replications=300, seed=2)
    assert r1.p_value == r2.p_value


def test_welch_fixture():
    res = t_test([1, 2, 3, 4, 5], [3, 4, 5, 6, 7])
    assert abs(res.statistic - (-2.0)) < 1e-12
    assert abs(res.df - 8.0) < 1e-12
    assert abs(res.p_value - 0.0805) < 5e-4


def test_welch_against_direct_formula_and_scipy():
    rng = np.random.default_rng(7)
    for _ in range(6):
        a = rng.normal(size=rng.integers(5, 20))
        b = rng.normal(loc=0.3, size=rng.integers(5, 20))
        res = t_test(a, b)
        # direct formulas
        va, vb = a.var(ddof=1), b.var(ddof=1)
        se2 = va / a.size + vb / b.size
        t = (a.mean() - b.mean()) / np.sqrt(se2)
        df = se2**2 / ((va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1))
        assert abs(res.statistic - t) < 1e-9
        assert abs(res.df - df) < 1e-9
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert abs(res.statistic - ref.statistic) < 1e-9
        assert abs(res.p_value - ref.pvalue) < 1e-9
        for alt in ("greater", "less"):
            mine = t_test(a, b, alternative=alt)
            theirs = stats.ttest_ind(a, b, equal_var=False, alternative=alt)
            assert abs(mine.p_value - theirs.pvalue) < 1e-9


def test_welch_degenerate_and_invariance():
    same = t_test([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    assert same.statistic == 0.0 and same.p_value == 1.0
    apart = t_test([1.0, 1.0], [2.0, 2.0])
    assert np.isinf(apart.statistic) and apart.p_value == 0.0
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=9), rng.normal(size=7)
    r1, r2 = t_test(a, b), t_test(10 * a, 10 * b)
    assert abs(r1.statistic - r2.statistic) < 1e-10
    assert abs(r1.p_value - r2.p_value) < 1e-10
    with pytest.raises(ValueError):
        t_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        t_test(a, b, alternative="both")


def test_chi_square_examples():
    flat = chi_square_independence([[10, 10], [10, 10]])
    assert flat.statistic == 0.0 and flat.df == 1.0 and flat.p_value == 1.0
    diag = chi_square_independence([[20, 0], [0, 20]])
    assert diag.statistic == 40.0
    assert diag.p_value < 1e-9


def test_chi_square_against_direct_formula():
    rng = np.random.default_rng(9)
    table = rng.integers(1, 40, size=(5, 3)).astype(float)
    res = chi_square_independence(table)
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    E = np.outer(rows, cols) / table.sum()
    stat = ((table - E) ** 2 / E).sum()
    df = (5 - 1) * (3 - 1)
    assert abs(res.statistic - stat) < 1e-9
    assert res.df == df
    assert abs(res.p_value - stats.chi2.sf(stat, df)) < 1e-9
    ref_stat, ref_p, ref_df, _ = stats.chi2_contingency(table, correction=False)
    assert abs(res.statistic - ref_stat) < 1e-9
    assert abs(res.p_value - ref_p) < 1e-9
    assert res.df == ref_df


def test_chi_square_errors():
    with pytest.raises(ZeroMargin):
        chi_square_independence([[0, 0], [5, 5]])
    with pytest.raises(ZeroMargin):
        chi_square_independence([[5, 0], [5, 0]])
    with pytest.raises(ValueError):
        chi_square_independence([[1, 2, 3]])
    with pytest.raises(ValueError):
        chi_square_independence([[1, -2], [3, 4]])


def test_bonferroni():
    assert round(bonferroni(0.05, 39), 3) == 0.001
    assert bonferroni(0.05, 1) == 0.05
    assert bonferroni(0.10, 5) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        bonferroni(0.0, 3)
    with pytest.raises(ValueError):
        bonferroni(0.05, 0)


def test_permutation_errors():
    with pytest.raises(EmptyGroup):
        permutation_test([], [1.0, 2.0], replications=10, seed=0)
    with pytest.raises(ValueError):
        permutation_test([1.0], [2.0], replications=0, seed=0)
    with pytest.raises(ValueError):
        permutation_test(np.ones((3, 2)), np.ones((3, 3)), replications=10, seed=0)
