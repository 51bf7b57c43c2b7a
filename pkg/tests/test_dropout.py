import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spincim.device import binomial_band
from spincim.dropout import (DropoutSpec, InvertedNormState, adaptive_p, apply_mask, effective_scale,
                             inverted_norm_forward, mc_forward, sample_layer_bit, sample_neuron_mask,
                             sample_spatial_mask, scale_dropout_forward, scale_regularizer)
from spincim.errors import BatchStatisticsError, DomainError
from spincim.model import BayesNet, MethodParams, build_model_spec
from spincim.rng import SeedTree
from spincim.tensor import Tensor


@pytest.mark.parametrize("p", [0.0, 0.1, 0.5, 1.0])
def test_mask_keep_frequency(p):
    rng = np.random.default_rng(0)
    keep = sample_neuron_mask(200_000, p, rng)
    lo, hi = binomial_band(200_000, 1 - p) if 0 < p < 1 else (1 - p, 1 - p)
    assert lo <= keep.mean() <= hi
    assert set(np.unique(keep)) <= {0.0, 1.0}


def test_spatial_mask_and_layer_bit():
    rng = np.random.default_rng(1)
    assert sample_spatial_mask(7, 0.3, rng).shape == (7,)
    bits = [sample_layer_bit(0.25, rng) for _ in range(40_000)]
    lo, hi = binomial_band(40_000, 0.75)
    assert lo <= np.mean(bits) <= hi
    with pytest.raises(DomainError):
        sample_spatial_mask(0, 0.1, rng)
    with pytest.raises(DomainError):
        sample_neuron_mask(3, 1.5, rng)


def test_inverted_dropout_is_unbiased():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 5))
    p = 0.3
    acc = np.zeros_like(x)
    n = 40_000
    for _ in range(n):
        acc += apply_mask(x, sample_neuron_mask(5, p, rng), p).data
    np.testing.assert_allclose(acc / n, x, atol=0.03)


def test_spatial_mask_broadcasts_over_maps():
    x = np.ones((2, 3, 2, 2))
    out = apply_mask(x, np.array([1.0, 0.0, 1.0]), 0.5).data
    assert np.all(out[:, 1] == 0) and np.all(out[:, [0, 2]] == 2.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=8))
def test_scale_dropout_swaps_in_identity(s):
    s = np.array(s)
    np.testing.assert_array_equal(effective_scale(s, 0.0).data, np.ones_like(s))
    np.testing.assert_array_equal(effective_scale(s, 1.0).data, s)
    x = np.ones((2, len(s), 3, 3))
    out = scale_dropout_forward(x, s, 1.0).data
    np.testing.assert_allclose(out[1, :, 2, 2], s)


def test_adaptive_p_endpoints_and_monotonicity():
    assert adaptive_p(10, (0.05, 0.25), (10, 1000)) == pytest.approx(0.05)
    assert adaptive_p(1000, (0.05, 0.25), (10, 1000)) == pytest.approx(0.25)
    ps = [adaptive_p(n, (0.05, 0.25), (10, 1000)) for n in (10, 50, 100, 500, 1000)]
    assert ps == sorted(ps)
    assert adaptive_p(100, (0.05, 0.25), (10, 1000)) == pytest.approx(0.15)
    with pytest.raises(DomainError):
        adaptive_p(5, (0.05, 0.25), (10, 1000))


def test_scale_regularizer():
    assert float(scale_regularizer(np.ones(4), 0.1).data) == 0.0
    assert float(scale_regularizer(np.array([2.0, 0.0]), 0.5).data) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        scale_regularizer(np.ones(2), -1.0)


def test_dropout_spec_validation():
    DropoutSpec("scale", 0.2, (0.05, 0.25))
    with pytest.raises(DomainError):
        DropoutSpec("channel", 0.2)
    with pytest.raises(DomainError):
        DropoutSpec("neuron", 0.2, (0.3, 0.1))


def test_inverted_norm_train_and_infer():
    rng = np.random.default_rng(3)
    st_ = InvertedNormState.create(3, momentum=0.5)
    st_.gamma.data[:] = [2.0, 1.0, 0.5]
    st_.beta.data[:] = [1.0, -1.0, 0.0]
    x = rng.standard_normal((64, 3)) * 3 + 1
    out = inverted_norm_forward(x, st_, 1.0, 1.0, "train").data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.std(axis=0), 1.0, rtol=1e-6)
    z = x * st_.gamma.data + st_.beta.data
    np.testing.assert_allclose(st_.running_mean, 0.5 * z.mean(axis=0))
    # infer mode uses the running estimates
    inf = inverted_norm_forward(x, st_, 1.0, 1.0, "infer").data
    np.testing.assert_allclose(inf, (z - st_.running_mean) / np.sqrt(st_.running_var + st_.eps))


def test_inverted_norm_dropped_gain_and_offset():
    st_ = InvertedNormState.create(2)
    st_.gamma.data[:] = [3.0, 4.0]
    st_.beta.data[:] = [5.0, 6.0]
    st_.running_mean[:] = 0.0
    st_.running_var[:] = 1.0
    x = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(inverted_norm_forward(x, st_, 0.0, 0.0, "infer").data, x, rtol=1e-7)
    np.testing.assert_allclose(inverted_norm_forward(x, st_, 1.0, 0.0, "infer").data, [[3.0, 8.0]], rtol=1e-7)


def test_inverted_norm_errors():
    st_ = InvertedNormState.create(2)
    with pytest.raises(BatchStatisticsError):
        inverted_norm_forward(np.ones((1, 2)), st_, 1.0, 1.0, "train")
    with pytest.raises(DomainError):
        inverted_norm_forward(np.ones((2, 2)), st_, 1.0, 1.0, "eval")
    with pytest.raises(DomainError):
        InvertedNormState(Tensor(np.ones(1)), Tensor(np.zeros(1)), np.zeros(1), np.ones(1), eps=0.0)


def test_mc_forward_reproducible_and_pass_dependent():
    spec = build_model_spec((4,), ["dense:16", "dense:16", "dense:3"], "spindrop")
    net = BayesNet(spec, MethodParams(p=0.5), seed=0)
    x = np.random.default_rng(0).standard_normal((5, 4))
    a = mc_forward(net, x, 6, SeedTree(1))
    b = mc_forward(net, x, 6, SeedTree(1))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert not all(np.array_equal(a[0], v) for v in a[1:])
    with pytest.raises(DomainError):
        mc_forward(net, x, 0, SeedTree(1))


def test_inference_masks_are_shared_across_the_batch():
    spec = build_model_spec((3,), ["dense:8", "dense:8", "dense:2"], "spindrop")
    net = BayesNet(spec, MethodParams(p=0.5), seed=0)
    x = np.tile(np.random.default_rng(0).standard_normal((1, 3)), (4, 1))
    out = net.forward_pass(x, SeedTree(5))
    assert np.all(out == out[0])
