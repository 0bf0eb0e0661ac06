"""k-means and cluster-count selection tests.

Fixed-k runs are checked against labeled blob generators and direct SSE
computations; the permutation null against the identities that hold for
one-column data and k = 1; selection against 3-cluster score sets.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from agecurve.cluster import (
    ClusterReport,
    cluster_report,
    kmeans,
    null_sse_reference,
    select_k,
)
from agecurve.errors import InvalidK
from agecurve.simulate import cluster_score_blobs, two_group_scores


def test_two_separated_blobs_recovered():
    for seed in range(20):
        a, b = two_group_scores(seed, n_per_group=15, shift=20.0, dim=2)
        X = np.vstack([a, b])
        truth = np.array([0] * 15 + [1] * 15)
        res = kmeans(X, 2, restarts=5, seed=seed)
        # agreement up to relabeling
        agree = (res.assignments == truth).mean()
        assert max(agree, 1 - agree) == 1.0


def test_k_equals_n_gives_zero_sse():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(9, 3))
    assert kmeans(X, 9, restarts=2, seed=0).sse < 1e-12


def test_k_one_matches_total_scatter():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(25, 3))
    res = kmeans(X, 1, restarts=2, seed=0)
    direct = float(((X - X.mean(axis=0)) ** 2).sum())
    assert abs(res.sse - direct) < 1e-9
    assert_allclose(res.centroids[0], X.mean(axis=0), atol=1e-12)


def test_sse_history_non_increasing():
    for seed in range(6):
        X, _, _ = cluster_score_blobs(seed, sizes=(20, 20, 20), separation=3.0)
        res = kmeans(X, 4, restarts=4, seed=seed)
        assert np.all(np.diff(res.sse_history) <= 1e-9)


def test_best_of_restarts_monotone_in_restarts():
    X, _, _ = cluster_score_blobs(3, sizes=(15, 15, 15), separation=2.0)
    sses = [kmeans(X, 3, restarts=r, seed=11).sse for r in (1, 2, 5, 10)]
    assert np.all(np.diff(sses) <= 1e-12)


def test_null_reference_one_dimension_matches_actual():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 1))
    k_range = (1, 2, 3)
    actual = [kmeans(X, k, restarts=10, seed=5).sse for k in k_range]
    null = null_sse_reference(X, k_range, runs=5, restarts=10, seed=5)
    for r in range(5):
        assert np.abs(null.all_sse[r] - actual).max() < 1e-6


def test_null_reference_k1_invariant_any_dimension():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 3))
    actual = kmeans(X, 1, restarts=1, seed=0).sse
    null = null_sse_reference(X, (1,), runs=8, restarts=1, seed=9)
    assert np.abs(null.all_sse[:, 0] - actual).max() < 1e-9


def test_null_reference_single_run_min_equals_mean():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(20, 2))
    null = null_sse_reference(X, (1, 2), runs=1, restarts=3, seed=2)
    assert_allclose(null.min_sse, null.mean_sse)


def test_actual_beats_null_at_true_k():
    wins = 0
    for seed in range(20):
        X, _, _ = cluster_score_blobs(seed)
        actual = kmeans(X, 3, restarts=4, seed=seed).sse
        null = null_sse_reference(X, (3,), runs=20, restarts=4, seed=seed)
        wins += actual < null.min_sse[0]
    assert wins >= 19


def test_select_k_agreement_case():
    k_range = (1, 2, 3, 4)
    actual = [100.0, 50.0, 10.0, 9.0]
    null_min = [100.0, 80.0, 60.0, 40.0]
    null_mean = [100.0, 90.0, 70.0, 50.0]
    selected, tables = select_k(actual, null_min, null_mean, k_range)
    assert selected == 3
    assert not tables["disagreement"]
    assert not tables["no_structure"]


def test_select_k_no_structure():
    k_range = (1, 2, 3)
    sse = [90.0, 40.0, 20.0]
    selected, tables = select_k(sse, sse, sse, k_range)
    assert selected == 1
    assert tables["no_structure"]
    assert_allclose(tables["gap_mean"], 0.0, atol=1e-12)


def test_select_k_disagreement_flag():
    k_range = (2, 3)
    actual = [10.0, 5.0]
    null_min = [30.0, 6.0]   # min-gap prefers k=2
    null_mean = [11.0, 50.0]  # mean-gap prefers k=3
    selected, tables = select_k(actual, null_min, null_mean, k_range)
    assert selected == 3
    assert tables["selected_k_min"] == 2
    assert tables["disagreement"]


def test_selection_pipeline_on_blobs():
    hits = 0
    for seed in range(5):
        X, _, _ = cluster_score_blobs(100 + seed)
        rep = cluster_report(X, range(1, 7), runs=30, restarts=4, seed=seed)
        hits += rep.selected_k == 3
    assert hits >= 4


def test_cluster_report_contents():
    X, labels, _ = cluster_score_blobs(0, sizes=(10, 10, 10))
    ids = [f"p{i}" for i in range(30)]
    rep = cluster_report(X, (1, 2, 3, 4), runs=10, restarts=4, seed=3, ids=ids)
    assert isinstance(rep, ClusterReport)
    assert set(rep.assignments) == set(ids)
    assert sorted(set(rep.assignments.values())) == list(range(rep.selected_k))
    assert rep.centroids.shape == (rep.selected_k, 3)
    assert np.all(np.diff(rep.actual_sse) <= 1e-9)
    assert np.all(np.diff(rep.sse_history) <= 1e-9)
    # determinism
    rep2 = cluster_report(X, (1, 2, 3, 4), runs=10, restarts=4, seed=3, ids=ids)
    assert rep2.selected_k == rep.selected_k
    assert_allclose(rep2.actual_sse, rep.actual_sse)
    assert_allclose(rep2.null_mean_sse, rep.null_mean_sse)
    assert rep2.assignments == rep.assignments


def test_invalid_arguments():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(5, 2))
    with pytest.raises(InvalidK):
        kmeans(X, 0, restarts=1, seed=0)
    with pytest.raises(InvalidK):
        kmeans(X, 6, restarts=1, seed=0)
    with pytest.raises(ValueError):
        kmeans(X, 2, restarts=0, seed=0)
    with pytest.raises(ValueError):
        null_sse_reference(X, (1, 2), runs=0, restarts=1, seed=0)
    with pytest.raises(ValueError):
        select_k([1.0], [1.0], [1.0, 2.0], (1,))
    with pytest.raises(ValueError):
        cluster_report(X, (1, 2), runs=2, restarts=1, seed=0, ids=["a"])
