import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_config, moons_config
from spincim import app
from spincim.cli import far_uniform_noise
from spincim.device import binomial_band
from spincim.errors import DomainError
from spincim.model import BayesNet, MethodParams, build_model_spec
from spincim.rng import DOMAIN_EVAL, SeedTree
from spincim.uncertainty import corrupt, nll, ood_rate, ood_scores, predict_bayes, predictive_entropy


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=10).filter(lambda v: sum(v) > 1e-6))
def test_entropy_bounds(weights):
    p = np.array(weights) / np.sum(weights)
    h = predictive_entropy(p)
    assert -1e-12 <= h <= math.log(len(p)) + 1e-12


def test_entropy_extremes():
    assert predictive_entropy(np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert predictive_entropy(np.array([1.0, 0.0, 0.0])) == 0.0
    with pytest.raises(DomainError):
        predictive_entropy(np.array([1.5, -0.5]))


def test_nll_with_floor():
    p = np.array([[0.5, 0.5], [1.0, 0.0]])
    assert nll(p, [0, 0]) == pytest.approx(math.log(2) / 2)
    assert nll(p, [0, 1]) == pytest.approx((math.log(2) - math.log(1e-12)) / 2)


def test_ood_rate_trivial_cases():
    ids = np.linspace(0, 1, 101)
    assert ood_rate(ids, np.full(10, 2.0)).detection_rate == 1.0
    assert ood_rate(ids, np.array([0.1])).detection_rate == 0.0
    assert ood_rate(ids, ids).threshold == pytest.approx(0.95)
    with pytest.raises(DomainError):
        ood_rate(ids, [], 0.95)
    with pytest.raises(DomainError):
        ood_rate(ids, ids, 1.0)


def test_ood_rate_exchangeable_scores():
    rng = np.random.default_rng(0)
    n = 20_000
    res = ood_rate(rng.standard_normal(n), rng.standard_normal(n), 0.95)
    lo, hi = binomial_band(n, 0.05)
    assert lo <= res.detection_rate <= hi


def test_corruptions():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(200, 8, 8))
    np.testing.assert_array_equal(corrupt(x, "gaussian_noise", 0.0), x)
    d = corrupt(x, "gaussian_noise", 0.3, rng) - x
    assert d.std() == pytest.approx(0.3, rel=0.03)
    u = corrupt(x, "uniform_noise", 0.5, rng, value_range=(0.0, 1.0))
    assert 0.45 < np.mean(u != x) < 0.55 and u.min() >= 0 and u.max() <= 1
    r = corrupt(x[:1], "rotation", 90.0)
    np.testing.assert_allclose(np.abs(r).sum(), np.abs(x[:1]).sum(), rtol=1e-9)
    np.testing.assert_allclose(np.sort(r.ravel()), np.sort(x[:1].ravel()), atol=1e-12)
    with pytest.raises(DomainError):
        corrupt(x, "blur", 1.0)
    with pytest.raises(DomainError):
        corrupt(x, "gaussian_noise", -1.0)
    with pytest.raises(DomainError):
        corrupt(x, "uniform_noise", 1.5)


def test_report_fields_and_batch_invariance():
    spec = build_model_spec((3,), ["dense:8", "dense:8", "dense:3"], "spindrop")
    net = BayesNet(spec, MethodParams(p=0.3))
    x = np.random.default_rng(0).standard_normal((10, 3))
    y = np.arange(10) % 3
    rep = predict_bayes(net, x, 7, SeedTree(2), labels=y)
    assert rep.per_pass_probs.shape == (7, 10, 3)
    np.testing.assert_allclose(rep.mean_probs.sum(axis=1), 1.0)
    assert 0.0 <= rep.accuracy <= 1.0 and rep.nll >= 0
    assert np.all((rep.agreement() >= 0) & (rep.agreement() <= 1))
    chunked = predict_bayes(net, x, 7, SeedTree(2), labels=y, batch_size=3)
    # same masks per pass; only BLAS summation order may differ between batch sizes
    np.testing.assert_allclose(rep.per_pass_probs, chunked.per_pass_probs, rtol=1e-12, atol=1e-15)
    recs = rep.records(y)
    assert len(recs) == 10 and set(recs[0]) == {"id", "label", "prediction", "entropy", "agreement"}
    assert np.array_equal(ood_scores(rep), rep.entropy)
    assert np.all(ood_scores(rep, "max_prob") <= 1.0)
    with pytest.raises(DomainError):
        predict_bayes(net, x, 0)


@pytest.fixture(scope="module")
def moons_model():
    cfg = moons_config("scaledrop", 0, epochs=40)
    data = app.load_dataset(cfg)
    net, _ = app.run_training(cfg, data)
    return net, data


def test_mc_mean_converges_with_passes(moons_model):
    net, data = moons_model
    x = data[2][:200]
    tree = SeedTree(0)
    # consecutive T differ by one pass: |mean_T - mean_{T-1}| in L1, averaged over samples
    rep = predict_bayes(net, x, 256, tree)
    means = np.cumsum(rep.per_pass_probs, axis=0) / np.arange(1, 257)[:, None, None]
    step = np.abs(means[-1] - means[-2]).sum(axis=1).mean()
    assert step <= 1e-3


@pytest.mark.parametrize("method", ["scaledrop", "spindrop"])
def test_far_noise_entropy_exceeds_in_distribution_on_blobs(method):
    for seed in range(10):
        cfg = make_config(seed, model={"input_shape": 2}, method={"name": method},
                          train={"epochs": 30, "dataset": "blobs", "n_train": 200, "n_test": 200, "noise": 0.5,
                                 "data_seed": seed})
        data = app.load_dataset(cfg)
        net, _ = app.run_training(cfg, data)
        x = data[2]
        tree = SeedTree(seed, (DOMAIN_EVAL,))
        ood = far_uniform_noise(len(x), x.min(axis=0), x.max(axis=0), 4.0, tree.child(1).generator())
        h_id = predict_bayes(net, x, 10, tree.child(2)).entropy.mean()
        h_ood = predict_bayes(net, ood, 10, tree.child(3)).entropy.mean()
        assert h_ood > h_id, f"seed {seed}: {h_ood} <= {h_id}"


def test_far_uniform_noise_stays_outside_the_data_box():
    rng = np.random.default_rng(0)
    z = far_uniform_noise(500, np.array([0.0, 0.0]), np.array([1.0, 2.0]), 4.0, rng)
    assert z.shape == (500, 2)
    outside = (z[:, 0] < -0.5) | (z[:, 0] > 1.5) | (z[:, 1] < -1.0) | (z[:, 1] > 3.0)
    assert outside.all()
