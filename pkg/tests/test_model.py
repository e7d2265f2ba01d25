import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestmix.model import (
    ConfigError, DirichletSym, EmptyDataError, Family, GemPrior, LengthMismatchError, ModelConfig,
    NigParams, NonFiniteValueError, default_config, log_gauss, nig_posterior, nig_update, validate_dataset,
)

from oracles import grid_nig_moments


def test_validate_dataset_orders_groups_by_first_appearance():
    d = validate_dataset([1.0, 2.0, 3.0, 4.0], ["z", "a", "z", "b"])
    assert d.labels == ("z", "a", "b")
    assert d.group_of.tolist() == [1, 1, 2, 3]
    assert d.values.tolist() == [1.0, 3.0, 2.0, 4.0]
    assert d.group_sizes.tolist() == [2, 1, 1]
    assert d.offsets.tolist() == [0, 2, 3, 4]
    assert d.group_values(1).tolist() == [1.0, 3.0]


@pytest.mark.parametrize("vals, groups, err", [
    ([], [], EmptyDataError),
    ([1.0, 2.0], [1], LengthMismatchError),
    ([1.0, float("nan")], [1, 1], NonFiniteValueError),
    ([1.0, float("inf")], [1, 2], NonFiniteValueError),
])
def test_validate_dataset_errors(vals, groups, err):
    with pytest.raises(err):
        validate_dataset(vals, groups)


def test_default_config_fisan():
    cfg = default_config("fisan", 50, 50)
    assert cfg.family is Family.FISAN
    assert cfg.nig.as_tuple() == (0.0, 0.01, 3.0, 2.0)
    assert isinstance(cfg.dist_weights, GemPrior) and cfg.dist_weights.is_random
    assert (cfg.dist_weights.shape, cfg.dist_weights.rate) == (1.0, 1.0)
    assert cfg.obs_weights.conc == pytest.approx(0.02)


def test_default_config_cam_and_fsan():
    cam = default_config("CAM", 10, 10)
    assert cam.dist_gem and cam.obs_gem
    assert (cam.obs_weights.shape, cam.obs_weights.rate) == (1.0, 1.0)
    fsan = default_config("fsan", 4, 5)
    assert fsan.dist_weights.conc == pytest.approx(0.25)
    assert fsan.obs_weights.conc == pytest.approx(0.2)


def test_config_rejects_wrong_prior_types():
    with pytest.raises(ConfigError):
        ModelConfig("FSAN", 3, 3, NigParams(), GemPrior(), DirichletSym(1.0))
    with pytest.raises(ConfigError):
        ModelConfig("CAM", 3, 3, NigParams(), GemPrior(), DirichletSym(1.0))
    with pytest.raises(ConfigError):
        Family.parse("nope")
    with pytest.raises(ConfigError):
        default_config("cam", 0, 3)


def test_config_roundtrip():
    cfg = ModelConfig("FISAN", 4, 7, NigParams(1.0, 0.5, 2.0, 3.0), GemPrior(fixed=2.0), DirichletSym(0.1))
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [dict(tau0=0.0), dict(lambda0=-1.0), dict(gamma0=0.0), dict(m0=float("nan"))])
def test_nig_params_validation(bad):
    with pytest.raises(ConfigError):
        NigParams(**{**dict(m0=0.0, tau0=1.0, lambda0=1.0, gamma0=1.0), **bad})


def test_nig_posterior_two_points():
    post = nig_posterior(NigParams(), np.ones(2), np.array([1.0, 2.0]))
    assert post.m0 == pytest.approx(1.492537, abs=1e-6)
    assert post.tau0 == pytest.approx(2.01)
    assert post.lambda0 == pytest.approx(4.0)
    assert post.gamma0 == pytest.approx(2.261194, abs=1e-6)


def test_nig_posterior_zero_weights_is_prior():
    prior = NigParams(0.3, 0.2, 2.5, 1.5)
    assert nig_posterior(prior, np.zeros(3), np.array([5.0, -1.0, 2.0])) == prior


def test_nig_posterior_matches_grid_integration():
    rs = np.random.default_rng(0)
    for _ in range(3):
        n = int(rs.integers(3, 8))
        y = rs.normal(rs.normal(0, 2), 1.0, n)
        w = rs.uniform(0.2, 1.0, n)
        prior = NigParams(float(rs.normal()), float(rs.uniform(0.1, 2)), float(rs.uniform(2, 4)), float(rs.uniform(0.5, 3)))
        post = nig_posterior(prior, w, y)
        e_mu, e_s2 = grid_nig_moments(prior, w, y)
        assert post.m0 == pytest.approx(e_mu, abs=1e-4)
        assert post.gamma0 / (post.lambda0 - 1) == pytest.approx(e_s2, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.integers(0, 19))
def test_nig_update_is_order_invariant_and_splits(ys, cut):
    y = np.asarray(ys)
    prior = NigParams(0.0, 0.01, 3.0, 2.0)
    full = nig_posterior(prior, np.ones(y.size), y)
    perm = nig_posterior(prior, np.ones(y.size), y[::-1])
    assert np.allclose(full.as_tuple(), perm.as_tuple(), rtol=1e-9, atol=1e-9)
    # sequential updating gives the same posterior
    k = min(cut, y.size)
    mid = nig_posterior(prior, np.ones(k), y[:k]) if k else prior
    seq = nig_posterior(mid, np.ones(y.size - k), y[k:]) if k < y.size else mid
    assert np.allclose(full.as_tuple(), seq.as_tuple(), rtol=1e-7, atol=1e-7)


def test_nig_update_vectorised_matches_scalar():
    prior = NigParams(0.5, 0.1, 2.0, 1.0)
    rs = np.random.default_rng(1)
    y = rs.normal(size=30)
    w = rs.uniform(size=(30, 3))
    m, t, l, g = nig_update(prior, w.sum(0), y @ w, (y * y) @ w)
    for c in range(3):
        p = nig_posterior(prior, w[:, c], y)
        assert np.allclose([m[c], t[c], l[c], g[c]], p.as_tuple())


def test_log_gauss():
    assert log_gauss(0.0, 0.0, 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))
    with pytest.raises(ValueError):
        log_gauss(0.0, 0.0, 0.0)
