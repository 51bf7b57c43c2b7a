import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spincim.errors import DimensionError, DomainError
from spincim.tensor import (Parameter, Tensor, affine_forward, batch_normalize, conv2d, grad_check, hardtanh,
                            im2col, inverse_softplus, log_softmax, maxpool2d, no_grad, relu, softmax,
                            softmax_ce, softplus)
from spincim import _kernels

seeds = st.integers(0, 2 ** 31 - 1)


def leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_elementwise_and_reduction_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 3, 4), leaf(rng, 4)
    c = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    f = lambda: ((a * b - a / c + (c ** 2).sqrt() * c.log() - (-a).exp()).sum(axis=0) * b).mean()  # noqa: E731
    assert grad_check(f, [a, b, c], floor=1e-6) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_matmul_affine_and_ce_gradients(seed):
    rng = np.random.default_rng(seed)
    x, W, b = leaf(rng, 5, 3), leaf(rng, 3, 4), leaf(rng, 4)
    y = rng.integers(0, 4, size=5)
    f = lambda: softmax_ce(affine_forward(x, W, b).transpose(1, 0).T.reshape(5, 4), y)  # noqa: E731
    assert grad_check(f, [x, W, b], floor=1e-6) < 1e-6


@settings(max_examples=15, deadline=None)
@given(seeds, st.integers(0, 1), st.sampled_from([1, 3]))
def test_conv_and_pool_gradients(seed, pad, k):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 2, 2, 5, 5)
    W = leaf(rng, 3, 2, k, k)
    b = leaf(rng, 3)
    c = rng.standard_normal((2, 3, (5 + 2 * pad - k + 1) // 2, (5 + 2 * pad - k + 1) // 2))
    f = lambda: (maxpool2d(conv2d(x, W, b, pad=pad), 2) * c).sum()  # noqa: E731
    assert grad_check(f, [x, W, b], floor=1e-6) < 1e-5


def test_batch_normalize_statistics_and_gradient():
    rng = np.random.default_rng(0)
    z = leaf(rng, 16, 3, scale=3.0)
    out, mean, var = batch_normalize(z, 1e-8)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=0), 1.0, rtol=1e-6)
    np.testing.assert_allclose(mean, z.data.mean(axis=0))
    np.testing.assert_allclose(var, z.data.var(axis=0))
    c = rng.standard_normal((16, 3))
    assert grad_check(lambda: (batch_normalize(z, 1e-5)[0] * c).sum(), [z], floor=1e-6) < 1e-5


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 6, 5))
    W = rng.standard_normal((4, 3, 3, 3))
    out = conv2d(x, W, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 6, 5))
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(5):
                    ref[n, o, i, j] = np.sum(xp[n, :, i:i + 3, j:j + 3] * W[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_im2col_layout():
    x = np.arange(2 * 2 * 3 * 3, dtype=float).reshape(2, 2, 3, 3)
    cols = im2col(x, 2).data
    assert cols.shape == (2 * 2 * 2, 2 * 4)
    # row (n=1, oh=0, ow=1), columns (c, ki, kj)
    expected = np.concatenate([x[1, c, 0:2, 1:3].reshape(-1) for c in range(2)])
    np.testing.assert_array_equal(cols[1 * 4 + 0 * 2 + 1], expected)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3), st.integers(0, 2), st.integers(1, 2))
def test_col2im_is_adjoint_of_im2col(seed, k, pad, stride):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 2, 5, 6))
    cols = _kernels.im2col(x, k, pad, stride)
    c = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * c)
    rhs = np.sum(x * _kernels.col2im(c, x.shape, k, pad, stride))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_maxpool_routes_gradient_to_first_maximum():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    maxpool2d(x, 2).sum().backward()
    np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_softmax_rows_and_log_softmax_stability():
    z = np.array([[1000.0, 1000.0], [-1000.0, 0.0]])
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(p[0], [0.5, 0.5])
    assert np.all(np.isfinite(log_softmax(Tensor(z)).data))


def test_softmax_ce_label_checks():
    with pytest.raises(DimensionError):
        softmax_ce(Tensor(np.zeros((3, 2))), [0, 1])
    with pytest.raises(IndexError):
        softmax_ce(Tensor(np.zeros((2, 2))), [0, 2])
    assert float(softmax_ce(Tensor(np.zeros((4, 2))), [0, 1, 0, 1]).data) == pytest.approx(np.log(2))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 30.0))
def test_softplus_inverse_round_trip(y):
    assert float(softplus(Tensor(inverse_softplus(y))).data) == pytest.approx(y, rel=1e-9)


def test_activation_masks():
    x = Tensor(np.array([-2.0, -0.5, 0.5, 2.0]), requires_grad=True)
    hardtanh(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 1, 1, 0])
    x.grad = None
    relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0, 0, 1, 1])


def test_broadcast_gradients_are_summed():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_no_grad_builds_no_graph():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (a * 2.0).sum()
    assert not out.requires_grad


def test_affine_forward_shape_errors():
    with pytest.raises(DimensionError):
        affine_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        affine_forward(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros(3))


def test_grad_check_rejects_bad_step_and_parameter_role():
    a = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(DomainError):
        grad_check(lambda: a.sum(), [a], eps=0.1)
    with pytest.raises(DomainError):
        Parameter(a, "momentum")
