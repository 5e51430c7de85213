import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.cluster import HDBSCAN as SkHDBSCAN
from sklearn.metrics import adjusted_rand_score

from flforensics.hdbscan import NOISE, core_distances, hdbscan, minimum_spanning_tree, mutual_reachability


def separated_blobs(seed, k=None, dims=2, sep=5.0):
    """Gaussian blobs whose centres are at least ``sep`` x the largest realized blob radius apart."""
    rng = np.random.default_rng(seed)
    k = k or int(rng.integers(2, 4))
    sizes = rng.integers(15, 40, size=k)
    offsets = [rng.normal(size=(s, dims)) for s in sizes]
    radius = max(np.linalg.norm(o, axis=1).max() for o in offsets)
    while True:
        centres = rng.uniform(0, 4 * sep * radius, size=(k, dims))
        gaps = [np.linalg.norm(centres[i] - centres[j]) for i in range(k) for j in range(i + 1, k)]
        if min(gaps) >= sep * radius:
            break
    X = np.vstack([c + o for c, o in zip(centres, offsets)])
    y = np.repeat(np.arange(k), sizes)
    return X, y


def partition(labels):
    return {frozenset(np.flatnonzero(labels == c).tolist()) for c in set(labels.tolist())}


@pytest.mark.parametrize("seed", range(50))
def test_recovers_separated_blobs(seed):
    X, y = separated_blobs(seed, dims=2 if seed % 2 else 3)
    labels = hdbscan(X, 7).labels
    assert adjusted_rand_score(y, labels) >= 0.99


@pytest.mark.parametrize("n", [0, 1, 3, 6])
def test_too_few_points_are_noise(n):
    X = np.random.default_rng(n).normal(size=(n, 2))
    out = hdbscan(X, 7)
    assert out.n_clusters == 0
    assert np.all(out.labels == NOISE)
    assert out.outliers == list(range(n))


def test_single_point_own_cluster_with_size_one():
    assert hdbscan(np.zeros((1, 2)), 1).labels.tolist() == [0]


def test_deterministic():
    X, _ = separated_blobs(3)
    a, b = hdbscan(X, 7), hdbscan(X, 7)
    assert np.array_equal(a.labels, b.labels)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 60))
    X = np.vstack([rng.normal(0, 1, (n // 2, 2)), rng.normal(rng.uniform(2, 8), 1, (n - n // 2, 2))])
    perm = rng.permutation(n)
    base = hdbscan(X, 5).labels
    permuted = hdbscan(X[perm], 5).labels
    back = np.empty_like(permuted)
    back[perm] = permuted
    assert partition(base) == partition(back)


def test_core_distance_counts_the_point_itself():
    X = np.array([[0.0], [1.0], [3.0], [6.0]])
    D = np.abs(X - X.T)
    assert core_distances(D, 1).tolist() == [0, 0, 0, 0]
    assert core_distances(D, 2).tolist() == [1, 1, 2, 3]
    assert core_distances(D, 3).tolist() == [3, 2, 3, 5]


def test_mutual_reachability_and_mst():
    X = np.array([[0.0], [1.0], [3.0], [6.0]])
    M = mutual_reachability(X, 2)
    assert M[0, 1] == 1 and M[1, 2] == 2 and M[2, 3] == 3 and M[0, 3] == 6
    mst = minimum_spanning_tree(M)
    assert mst.tolist() == [[0, 1, 1.0], [1, 2, 2.0], [2, 3, 3.0]]


def test_uniform_cloud_has_at_most_one_cluster():
    X = np.random.default_rng(0).uniform(size=(60, 2))
    assert hdbscan(X, 7).n_clusters <= 2


@pytest.mark.parametrize("seed", range(20))
def test_agrees_with_reference_implementation(seed):
    X, _ = separated_blobs(100 + seed, sep=3.0)
    ours = hdbscan(X, 7, 7).labels
    ref = SkHDBSCAN(min_cluster_size=7, min_samples=7).fit(X).labels_
    assert adjusted_rand_score(ref, ours) >= 0.95


def test_rejects_bad_min_cluster_size():
    with pytest.raises(ValueError):
        hdbscan(np.zeros((5, 2)), 0)
