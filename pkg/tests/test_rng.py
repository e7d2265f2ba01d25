import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nestmix.rng import RngStream


def test_same_seed_same_draws():
    a, b = RngStream(42), RngStream(42)
    assert np.array_equal(a.uniform(size=100), b.uniform(size=100))
    assert np.array_equal(a.gamma(0.3, 2.0, size=50), b.gamma(0.3, 2.0, size=50))


def test_substreams_do_not_depend_on_sibling_usage():
    root = RngStream(9)
    s1 = root.substream(1).uniform(size=10)
    root2 = RngStream(9)
    root2.substream(0).uniform(size=1000)
    root2.uniform(size=77)
    assert np.array_equal(root2.substream(1).uniform(size=10), s1)
    assert not np.array_equal(root.substream(0).uniform(size=10), s1)


def test_substreams_look_independent():
    a = RngStream(1).substream(0).normal(size=5000)
    b = RngStream(1).substream(1).normal(size=5000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_uniform_strictly_inside_unit_interval():
    u = RngStream(0).uniform(size=200_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


@pytest.mark.parametrize("shape", [0.05, 0.4, 1.0, 2.5, 30.0])
def test_gamma_ks(shape):
    x = RngStream(3).gamma(shape, 2.0, size=20000)
    assert stats.kstest(x, stats.gamma(shape, scale=0.5).cdf).pvalue > 1e-3


def test_log_gamma_tiny_shape_is_finite():
    lg = RngStream(0).log_gamma(np.full(1000, 1e-200))
    assert np.all(np.isfinite(lg))
    # log G(a) ~ log(U)/a dominates: hugely negative
    assert np.median(lg) < -1e100


@pytest.mark.parametrize("a, b", [(0.5, 0.5), (2.0, 5.0), (1.0, 30.0)])
def test_beta_ks_and_complement(a, b):
    lv, l1mv = RngStream(4).log_beta(np.full(20000, a), np.full(20000, b))
    assert np.allclose(np.exp(lv) + np.exp(l1mv), 1.0)
    assert stats.kstest(np.exp(lv), stats.beta(a, b).cdf).pvalue > 1e-3


def test_dirichlet_marginals():
    conc = np.array([0.3, 1.0, 2.7])
    w = RngStream(5).dirichlet(np.tile(conc, (20000, 1)))
    assert np.allclose(w.sum(1), 1.0)
    for k in range(3):
        marg = stats.beta(conc[k], conc.sum() - conc[k])
        assert stats.kstest(w[:, k], marg.cdf).pvalue > 1e-3


def test_categorical_frequencies():
    p = np.array([0.1, 0.0, 0.6, 0.3])
    with np.errstate(divide="ignore"):
        lw = np.log(p)
    idx = RngStream(6).categorical_log(np.tile(lw, (30000, 1)))
    counts = np.bincount(idx, minlength=4)
    assert counts[1] == 0
    keep = p > 0
    assert stats.chisquare(counts[keep], 30000 * p[keep]).pvalue > 1e-3


def test_categorical_errors():
    r = RngStream(0)
    with pytest.raises(ValueError):
        r.categorical_log(np.array([-np.inf, -np.inf]))
    with pytest.raises(ValueError):
        r.categorical_log(np.array([0.0, np.nan]))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=1, max_size=8), st.integers(0, 2 ** 32))
def test_categorical_never_picks_zero_weight(logw, seed):
    lw = np.asarray(logw)
    lw[::2] = -np.inf if lw.size > 1 else lw[::2]
    idx = RngStream(seed).categorical_log(np.tile(lw, (20, 1)))
    assert np.all(np.isfinite(lw[idx]))


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0).gamma(0.0)
    with pytest.raises(ValueError):
        RngStream(0).normal(0.0, -1.0)
