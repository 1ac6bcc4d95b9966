import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlgssm.exceptions import DegenerateInput
from mlgssm.initializer import (
    InitConfig, best_params_per_series, default_single_init, flat_length, flatten, init_mixture,
    kmeans, unflatten,
)
from mlgssm.kalman import LgssmParams, log_likelihood
from mlgssm.lgssm_em import EmConfig, fit_lgssm
from mlgssm.simulate import sample_lgssm
from oracles import kmeans_exhaustive, random_params


def test_default_init_values():
    p = default_single_init(2, 1, np.random.default_rng(0))
    np.testing.assert_array_equal(p.Gamma, 0.05 * np.eye(2))
    np.testing.assert_array_equal(p.Sigma, [[0.05]])
    np.testing.assert_array_equal(p.P, 1e4 * np.eye(2))
    np.testing.assert_array_equal(p.C, [[1.0, 1.0]])
    np.testing.assert_array_equal(p.mu, np.zeros(2))
    assert np.max(np.abs(p.A.T @ p.A - np.eye(2))) < 1e-10


def test_default_init_multichannel_and_determinism():
    a = default_single_init(3, 2, np.random.default_rng(5))
    b = default_single_init(3, 2, np.random.default_rng(5))
    np.testing.assert_array_equal(a.as_vector(), b.as_vector())
    np.testing.assert_array_equal(a.C[0], np.ones(3))
    assert np.any(a.C[1] != 1.0)


def easy_series(seed, T=100):
    rng = np.random.default_rng(seed)
    p = LgssmParams(A=[[0.8]], Gamma=[[0.3]], C=[[1.0]], Sigma=[[0.1]], mu=[0.0], P=[[1.0]])
    return sample_lgssm(p, T, rng)[None]


def test_single_restart_returns_that_fit():
    Y = easy_series(0)
    cfg = InitConfig(m=1, dx=1, M=1, seed=3, single=EmConfig(max_iter=30))
    fits = best_params_per_series(Y, cfg)
    init = default_single_init(1, 1, np.random.default_rng(3))
    ref, trace = fit_lgssm(Y[0], init, cfg.single)
    np.testing.assert_allclose(fits.params[0].as_vector(), ref.as_vector(), atol=1e-10)
    assert fits.log_likelihood[0] == pytest.approx(trace.log_likelihood[-1], abs=1e-8)


def test_selected_fit_dominates_restarts():
    Y = easy_series(1)
    fits = best_params_per_series(Y, InitConfig(m=5, dx=1, M=1, single=EmConfig(max_iter=20)))
    assert fits.restart_loglik.shape == (1, 5)
    assert np.all(fits.log_likelihood[0] >= fits.restart_loglik[0])
    assert fits.log_likelihood[0] == pytest.approx(log_likelihood(fits.params[0], Y[0]),
                                                   abs=1e-8)


def test_more_restarts_do_not_hurt_in_median():
    few, many = [], []
    for seed in range(10):
        Y = easy_series(100 + seed, T=60)
        single = EmConfig(max_iter=10)
        few.append(best_params_per_series(Y, InitConfig(m=2, dx=2, M=1, seed=seed,
                                                        single=single)).log_likelihood[0])
        many.append(best_params_per_series(Y, InitConfig(m=10, dx=2, M=1, seed=seed,
                                                         single=single)).log_likelihood[0])
    assert np.median(many) >= np.median(few)


def test_kmeans_with_m_equal_n():
    X = np.array([[0.0, 0.0], [1.0, 5.0], [-3.0, 2.0]])
    centers, props, labels = kmeans(X, 3, seed=0)
    np.testing.assert_allclose(sorted(map(tuple, centers)), sorted(map(tuple, X)), atol=1e-12)
    np.testing.assert_allclose(props, 1 / 3)


def test_kmeans_matches_exhaustive_oracle(rng):
    X = np.concatenate([rng.normal(0.0, 0.3, (3, 2)), rng.normal(5.0, 0.3, (3, 2))])
    centers, props, _ = kmeans(X, 2, seed=1)
    oracle, _ = kmeans_exhaustive(X, 2)
    order = np.argsort(centers[:, 0])
    np.testing.assert_allclose(centers[order], oracle[np.argsort(oracle[:, 0])], atol=1e-6)
    assert props.sum() == pytest.approx(1.0)


def test_kmeans_degenerate():
    with pytest.raises(DegenerateInput):
        kmeans(np.ones((5, 2)), 2)
    with pytest.raises(DegenerateInput):
        kmeans(np.eye(2), 3)


@pytest.mark.parametrize("dx,dy,constrain", [(2, 1, True), (3, 2, True), (2, 2, False)])
def test_flatten_roundtrip(rng, dx, dy, constrain):
    p = random_params(rng, dx, dy)
    if constrain:
        p.C[0] = 1.0
    v = flatten(p, constrain)
    assert v.size == flat_length(dx, dy, constrain)
    if constrain:
        assert v.size == dx * dx * 3 + (dy - 1) * dx + dy * dy + dx
    q = unflatten(v, dx, dy, constrain, project=False)
    np.testing.assert_array_equal(q.as_vector(), p.as_vector())
    q = unflatten(v, dx, dy, constrain, project=True)
    np.testing.assert_allclose(q.as_vector(), p.as_vector(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_unflattened_covariances_are_spd(dx, dy, seed):
    v = np.random.default_rng(seed).standard_normal(flat_length(dx, dy))
    p = unflatten(v, dx, dy)
    for m in (p.Gamma, p.Sigma, p.P):
        np.testing.assert_array_equal(m, m.T)
        assert np.linalg.eigvalsh(m).min() > 0
        np.linalg.cholesky(m)


def test_init_mixture_with_one_series_per_component():
    Y = np.concatenate([easy_series(7, 40), easy_series(8, 40) * 3.0])
    cfg = InitConfig(m=2, dx=1, M=2, single=EmConfig(max_iter=15))
    fits = best_params_per_series(Y, cfg)
    theta = init_mixture(Y, cfg, fits=fits)
    np.testing.assert_allclose(theta.weights, [0.5, 0.5])
    got = sorted(tuple(c.as_vector()) for c in theta.components)
    want = sorted(tuple(p.as_vector()) for p in fits.params)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_init_mixture_is_deterministic():
    Y = np.concatenate([easy_series(s, 40) for s in range(4)])
    cfg = InitConfig(m=2, dx=2, M=2, seed=11, single=EmConfig(max_iter=10))
    a = init_mixture(Y, cfg)
    b = init_mixture(Y, cfg)
    np.testing.assert_array_equal(a.as_vector(), b.as_vector())
    assert a.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        InitConfig(m=0)
