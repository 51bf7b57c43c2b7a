"""Dense tensors with reverse-mode differentiation.

A deliberately small engine: every op builds a node holding its parents and a
closure that pushes the output gradient back to them. Graphs are rebuilt on
every forward pass and tensors are never mutated once they take part in one.
"""

import contextlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, DomainError, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------
    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data, dtype=data.dtype)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backprop --------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b),
                            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data / b.data, (a, b),
                            lambda g: (_unbroadcast(g / b.data, a.shape),
                                       _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    def __pow__(self, k):
        a = self
        return Tensor._make(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError("matmul expects 2-D operands")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul inner axis mismatch: {a.shape[1]} vs {b.shape[0]}")
        return Tensor._make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))

    # -- reductions and shape ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        a = self
        axes = axes or tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    # -- elementwise functions ------------------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)
        return Tensor._make(out, (a,), lambda g: (g * out,))

    def log(self):
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)
        return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

ROLES = ("weight", "bias", "scale", "affine_gamma", "affine_beta", "posterior_mu", "posterior_sigma")


@dataclass
class Parameter:
    """A trainable tensor tagged with the role that selects its update rule."""

    value: Tensor
    role: str
    requires_grad: bool = True
    binary: bool = False
    name: str = field(default="")

    def __post_init__(self):
        if self.role not in ROLES:
            raise DomainError(f"unknown parameter role {self.role!r}")
        self.value.requires_grad = self.requires_grad


# ---------------------------------------------------------------------------
# Layer primitives
# ---------------------------------------------------------------------------

def affine_forward(x, W, b):
    """out[n, c] = sum_d x[n, d] W[d, c] + b[c]."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if x.ndim != 2:
        raise DimensionError(f"x must be 2-D, got shape {x.shape}")
    if W.ndim != 2:
        raise DimensionError(f"W must be 2-D, got shape {W.shape}")
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"axis 1 of x ({x.shape[1]}) does not match axis 0 of W ({W.shape[0]})")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"axis 0 of b ({b.shape}) does not match axis 1 of W ({W.shape[1]})")
    return x @ W + b


def relu(x):
    a = x
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def hardtanh(x, clip=1.0):
    a = x
    mask = np.abs(a.data) <= clip
    return Tensor._make(np.clip(a.data, -clip, clip), (a,), lambda g: (g * mask,))


def softplus(x):
    a = x
    out = np.logaddexp(0.0, a.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * sig,))


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def log_softmax(logits):
    a = logits
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return Tensor._make(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def softmax(logits):
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits, labels):
    """Mean negative log-softmax of the true class, max-shifted for stability."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"axis 0 of logits ({n}) does not match label count ({labels.shape[0]})")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    lsm = log_softmax(logits)
    pick = np.zeros((n, c))
    pick[np.arange(n), labels] = -1.0 / n
    a = lsm
    return Tensor._make(np.asarray((a.data * pick).sum()), (a,), lambda g: (g * pick,))


def conv_out_size(size, k, pad, stride):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, k, pad=0, stride=1):
    """Unfold (N, C, H, W) into patch rows ordered (n, oh, ow) x columns ordered (c, ki, kj).

    The same unfolding defines the column layout of a crossbar under the
    unfold-column mapping, so hardware and math paths share it.
    """
    a = as_tensor(x)
    shape = a.shape
    cols = _kernels.im2col(a.data, k, pad, stride)
    return Tensor._make(cols, (a,), lambda g: (_kernels.col2im(g, shape, k, pad, stride),))


def conv2d(x, W, b=None, pad=0, stride=1):
    """Convolution as im2col followed by a matmul.

    x: (N, C_in, H, W); W: (C_out, C_in, K, K); b: (C_out,) or None.
    """
    x, W = as_tensor(x), as_tensor(W)
    n, c, h, w = x.shape
    c_out, c_in, k, k2 = W.shape
    if c != c_in:
        raise DimensionError(f"axis 1 of x ({c}) does not match axis 1 of W ({c_in})")
    if k != k2:
        raise DimensionError("kernels must be square")
    ho, wo = conv_out_size(h, k, pad, stride), conv_out_size(w, k, pad, stride)
    cols = im2col(x, k, pad, stride)
    out = cols @ W.reshape(c_out, c_in * k * k).T
    if b is not None:
        out = out + as_tensor(b)
    return out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)


def maxpool2d(x, size=2):
    a = as_tensor(x)
    n, c, h, w = a.shape
    ho, wo = h // size, w // size
    trimmed = a.data[:, :, :ho * size, :wo * size]
    blocks = trimmed.reshape(n, c, ho, size, wo, size)
    out = blocks.max(axis=(3, 5))
    hit = blocks == out[:, :, :, None, :, None]
    # route each gradient to the first maximum only
    first = np.cumsum(np.cumsum(hit, axis=3), axis=5) == 1
    hit &= first

    def back(g):
        gb = hit * g[:, :, :, None, :, None]
        full = np.zeros(a.shape)
        full[:, :, :ho * size, :wo * size] = gb.reshape(n, c, ho * size, wo * size)
        return (full,)

    return Tensor._make(out, (a,), back)


def batch_normalize(z, eps):
    """Per-column (N, C) or per-channel (N, C, H, W) normalization with batch statistics.

    Returns the normalized tensor together with the biased batch mean and
    variance used.
    """
    a = as_tensor(z)
    axes = (0,) if a.ndim == 2 else (0, 2, 3)
    m = np.prod([a.shape[i] for i in axes])
    mean = a.data.mean(axis=axes, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def back(g):
        gsum = g.sum(axis=axes, keepdims=True)
        gx = (g * xhat).sum(axis=axes, keepdims=True)
        return (inv * (g - gsum / m - xhat * gx / m),)

    out = Tensor._make(xhat, (a,), back)
    return out, mean.reshape(-1), var.reshape(-1)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def grad_check(f, params, eps=1e-5, reference=None, floor=1.0):
    """Worst component-wise error between reverse-mode and central-difference gradients.

    ``f`` returns a scalar Tensor built from ``params``. ``reference`` (defaults to
    ``f``) is the function differenced numerically, which lets a surrogate stand
    in for a non-differentiable forward. The error is |a - n| / max(|a|, |n|, floor),
    so it is relative for large components and absolute below ``floor``.
    """
    if not 0.0 < eps <= 1e-2:
        raise DomainError(f"eps must lie in (0, 1e-2], got {eps}")
    reference = reference or f
    for p in params:
        p.grad = None
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NumericError("function value is not finite")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                up = float(reference().data)
            flat[i] = orig - eps
            with no_grad():
                down = float(reference().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("function value is not finite under perturbation")
            num = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
