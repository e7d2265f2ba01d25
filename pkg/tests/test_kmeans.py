import numpy as np
import pytest
from sklearn.cluster import KMeans

from nestmix.kmeans import kmeans
from nestmix.rng import RngStream


def _blobs(seed=0):
    rs = np.random.default_rng(seed)
    return np.concatenate([rs.normal(c, 0.5, 200) for c in (-6.0, 0.0, 5.0)])


def test_three_blobs_match_sklearn():
    x = _blobs()
    centers, labels, inertia = kmeans(x, 3, RngStream(0))
    ref = KMeans(3, n_init=10, random_state=0).fit(x[:, None])
    assert np.allclose(np.sort(centers), np.sort(ref.cluster_centers_[:, 0]), atol=1e-8)
    assert inertia == pytest.approx(ref.inertia_, rel=1e-9)


def test_multidimensional_input():
    rs = np.random.default_rng(1)
    x = np.concatenate([rs.normal(0, 0.1, (50, 2)), rs.normal(3, 0.1, (50, 2))])
    centers, labels, _ = kmeans(x, 2, RngStream(1))
    assert centers.shape == (2, 2)
    assert len(set(labels[:50])) == 1 and len(set(labels[50:])) == 1 and labels[0] != labels[-1]


def test_deterministic_and_degenerate():
    x = _blobs(2)
    a = kmeans(x, 4, RngStream(5))
    b = kmeans(x, 4, RngStream(5))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c, lab, inertia = kmeans(np.ones(10), 3, RngStream(0))
    assert inertia == 0.0
    with pytest.raises(ValueError):
        kmeans(x, 0, RngStream(0))
