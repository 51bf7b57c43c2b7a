import numpy as np
import pytest

from conftest import moons_config
from spincim import app
from spincim.errors import DivergenceError, DomainError
from spincim.model import BayesNet
from spincim.train import Adam, TrainParams, fit, objective
from spincim.rng import SeedTree
from spincim.tensor import Parameter, Tensor


def test_adam_minimizes_a_quadratic():
    p = Parameter(Tensor(np.array([3.0, -2.0]), requires_grad=True), "bias")
    opt = Adam([p], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        loss = (p.value * p.value).sum()
        loss.backward()
        opt.step()
    np.testing.assert_allclose(p.value.data, 0.0, atol=1e-2)


def test_loss_decreases_and_latents_stay_clipped():
    cfg = moons_config("scaledrop", 0, epochs=15)
    x, y, _, _ = app.load_dataset(cfg)
    net = app.build_net(cfg)
    hist = fit(net, x, y, cfg.train_params(), seed=0)
    assert len(hist) == 15 and hist[-1]["loss"] < hist[0]["loss"]
    assert hist[-1]["train_accuracy"] > 0.9
    for p in net.params.values():
        if p.binary:
            assert np.abs(p.value.data).max() <= 1.0


def test_elbo_objective_includes_annealed_kl():
    cfg = moons_config("vi_subset", 0)
    net = app.build_net(cfg)
    for post in net.posteriors.values():
        post.mu.data[:] = 2.0
    x, y, _, _ = app.load_dataset(cfg)
    logits = net.forward(x[:8], SeedTree(0), train=True)
    hp = TrainParams(epochs=10, kl_warmup=0.5, lam_kl=1.0)
    early, ce = objective(net, logits, y[:8], 0, 4, hp)
    late, _ = objective(net, logits, y[:8], 9, 4, hp)
    kl = float(net.kl().data)
    assert float(early.data) == pytest.approx(float(ce.data) + 0.2 * kl / 4)
    assert float(late.data) == pytest.approx(float(ce.data) + kl / 4)


def test_divergence_rolls_back_and_raises():
    cfg = moons_config("scaledrop", 0, epochs=3)
    x, y, _, _ = app.load_dataset(cfg)
    net = app.build_net(cfg)
    before = {k: p.value.data.copy() for k, p in net.params.items()}
    bad = x.copy()
    bad[5] = np.nan
    with pytest.raises(DivergenceError):
        fit(net, bad, y, cfg.train_params(), seed=0)
    for k, p in net.params.items():
        np.testing.assert_array_equal(p.value.data, before[k])


def test_training_is_deterministic():
    cfg = moons_config("spindrop", 3, epochs=5)
    x, y, _, _ = app.load_dataset(cfg)
    a, b = app.build_net(cfg), app.build_net(cfg)
    ha = fit(a, x, y, cfg.train_params(), seed=3)
    hb = fit(b, x, y, cfg.train_params(), seed=3)
    assert ha == hb
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].value.data, b.params[k].value.data)


def test_fit_argument_checks():
    cfg = moons_config("scaledrop", 0)
    net = BayesNet(cfg.model_spec())
    with pytest.raises(DomainError):
        fit(net, np.zeros((3, 2)), np.zeros(2), TrainParams())
    with pytest.raises(DomainError):
        fit(net, np.zeros((3, 2)), np.zeros(3), TrainParams(epochs=0))
