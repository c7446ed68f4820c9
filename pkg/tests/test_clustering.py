import numpy as np
import pytest

from cdfl.clustering import (
    NOISE,
    export_distances_csv,
    hdbscan,
    largest_non_noise_cluster,
    pairwise_distances,
)
from cdfl.errors import SchemaError
from cdfl.rng import RngHub


def sklearn_c_max(dist, min_pts):
    """Reference oracle: C_max from the scikit-learn HDBSCAN."""
    from sklearn.cluster import HDBSCAN

    labels = HDBSCAN(
        min_cluster_size=min_pts, min_samples=min_pts, metric="precomputed"
    ).fit(dist).labels_
    ids = [int(c) for c in np.unique(labels) if c != -1]
    if not ids:
        return set(range(len(labels)))
    sizes = {c: int(np.sum(labels == c)) for c in ids}
    best = max(ids, key=lambda c: (sizes[c], -c))
    return {int(i) for i in np.where(labels == best)[0]}


def planted_instance(rng, n_major, n_minor, sep, dim=5, spread=1.0, outliers=1):
    major = rng.normal(0.0, spread, (n_major, dim))
    minor = rng.normal(0.0, spread, (n_minor, dim)) + sep * spread
    parts = [major, minor]
    for j in range(outliers):
        parts.append(rng.normal(0.0, spread, (1, dim)) + (300.0 + 100.0 * j) * spread)
    return np.vstack(parts)


class TestPairwiseDistances:
    def test_identical_vectors_zero_matrix(self):
        d = pairwise_distances([np.ones(3)] * 4)
        assert np.allclose(d, 0.0)

    def test_euclidean_value(self):
        d = pairwise_distances([np.array([0.0, 0.0]), np.array([3.0, 4.0])])
        assert d[0, 1] == pytest.approx(5.0)

    def test_matches_naive_double_loop(self):
        rng = RngHub(11).stream("dist")
        vecs = [rng.normal(size=6) for _ in range(10)]
        d = pairwise_distances(vecs)
        for i in range(10):
            for j in range(10):
                naive = float(np.sqrt(np.sum((vecs[i] - vecs[j]) ** 2)))
                assert d[i, j] == pytest.approx(naive, abs=1e-9)

    def test_cosine_zero_norm_convention(self):
        d = pairwise_distances([np.zeros(3), np.ones(3)], metric="cosine")
        assert d[0, 1] == 1.0
        assert d[0, 0] == 0.0

    def test_cosine_matches_naive(self):
        rng = RngHub(12).stream("cos")
        vecs = [rng.normal(size=4) for _ in range(6)]
        d = pairwise_distances(vecs, metric="cosine")
        for i in range(6):
            for j in range(6):
                if i == j:
                    continue
                naive = 1.0 - float(
                    np.dot(vecs[i], vecs[j])
                    / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j]))
                )
                assert d[i, j] == pytest.approx(naive, abs=1e-9)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(SchemaError):
            pairwise_distances([np.zeros(2), np.zeros(3)])


class TestHdbscan:
    def test_single_point_is_noise(self):
        labels = hdbscan(np.zeros((1, 1)), 2)
        assert labels.tolist() == [NOISE]

    def test_all_identical_single_cluster(self):
        labels = hdbscan(np.zeros((5, 5)), 3)
        assert labels.tolist() == [0, 0, 0, 0, 0]

    def test_fewer_points_than_min_pts_all_noise(self):
        d = pairwise_distances([np.zeros(2), np.ones(2)])
        assert hdbscan(d, 3).tolist() == [NOISE, NOISE]

    def test_planted_blobs_recovered(self):
        rng = RngHub(21).stream("planted")
        x = planted_instance(rng, 10, 6, sep=10.0)
        d = pairwise_distances(list(x))
        labels = hdbscan(d, 3)
        assert labels[-1] == NOISE  # far outlier
        major = set(labels[:10].tolist())
        minor = set(labels[10:16].tolist())
        assert len(major) == 1 and len(minor) == 1
        assert major != minor
        assert NOISE not in major | minor

    def test_matches_reference_on_planted_instance(self):
        rng = RngHub(22).stream("ref")
        x = planted_instance(rng, 10, 6, sep=10.0)
        d = pairwise_distances(list(x))
        ours = set(largest_non_noise_cluster(hdbscan(d, 3)))
        assert ours == sklearn_c_max(d, 3)

    def test_membership_invariant(self):
        # Every non-noise cluster has at least min_pts members.
        hub = RngHub(23)
        for trial in range(30):
            rng = hub.stream("mem", trial)
            pts = rng.normal(size=(int(rng.integers(4, 25)), 4))
            labels = hdbscan(pairwise_distances(list(pts)), 3)
            for c in np.unique(labels):
                if c != NOISE:
                    assert np.sum(labels == c) >= 3

    def test_permutation_equivariance(self):
        rng = RngHub(24).stream("perm")
        x = planted_instance(rng, 8, 5, sep=8.0)
        d = pairwise_distances(list(x))
        labels = hdbscan(d, 3)
        perm = rng.permutation(len(x))
        d_perm = d[np.ix_(perm, perm)]
        labels_perm = hdbscan(d_perm, 3)
        # Same partition up to relabeling.
        def partition(lbls):
            groups = {}
            for idx, c in enumerate(lbls):
                groups.setdefault(int(c), set()).add(idx)
            noise = groups.pop(NOISE, set())
            return {frozenset(g) for g in groups.values()}, noise

        base_parts, base_noise = partition(labels)
        perm_parts, perm_noise = partition([labels_perm[np.where(perm == i)[0][0]] for i in range(len(x))])
        assert base_parts == perm_parts
        assert base_noise == perm_noise

    def test_planted_cluster_recovery_rate(self):
        # On 100 planted instances (separation ratio >= 5), C_max equals the
        # true majority blob in at least 95, cross-checked with the
        # reference implementation.
        hub = RngHub(25)
        ours_correct = 0
        ref_match = 0
        for trial in range(100):
            rng = hub.stream("recovery", trial)
            n_major = int(rng.integers(8, 14))
            n_minor = int(rng.integers(4, min(8, n_major)))
            sep = float(rng.uniform(5.0, 15.0))
            x = planted_instance(rng, n_major, n_minor, sep=sep)
            d = pairwise_distances(list(x))
            got = set(largest_non_noise_cluster(hdbscan(d, 3)))
            ours_correct += got == set(range(n_major))
            ref_match += got == sklearn_c_max(d, 3)
        assert ours_correct >= 95
        assert ref_match >= 95


class TestLargestCluster:
    def test_basic(self):
        assert largest_non_noise_cluster(np.array([0, 0, 0, 1, 1, -1])) == [0, 1, 2]

    def test_all_noise_returns_everything(self):
        assert largest_non_noise_cluster(np.array([-1, -1, -1])) == [0, 1, 2]

    def test_tie_breaks_to_lowest_id(self):
        assert largest_non_noise_cluster(np.array([1, 1, 0, 0])) == [2, 3]


def test_distance_csv_round_trip(tmp_path):
    rng = RngHub(26).stream("csv")
    d = pairwise_distances([rng.normal(size=3) for _ in range(5)])
    path = tmp_path / "d.csv"
    export_distances_csv(d, path)
    back = np.loadtxt(path, delimiter=",")
    assert np.allclose(back, d, atol=0)
