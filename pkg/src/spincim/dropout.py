"""Dropout-based Bayesian mechanisms.

Four granularities share one idea, a Bernoulli module switching part of the
network per forward pass:

* neuron: one module per neuron, zeroing its activation;
* spatial: one module per feature map, zeroing the whole map;
* scale: one module per layer, swapping the learned scale vector for the
  identity scale (modulation, never zeroing);
* affine: two modules per layer acting on the gain and offset of an inverted
  normalization, whose affine transform precedes the statistics.

Mask convention: 1 keeps, 0 drops; ``p`` is the drop probability.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BatchStatisticsError, DomainError
from .tensor import Tensor, as_tensor, batch_normalize

KINDS = ("neuron", "spatial", "scale", "affine")


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"dropout probability must lie in [0, 1], got {p}")


@dataclass
class DropoutSpec:
    kind: str
    p: float
    adaptive: tuple = None  # (p_min, p_max) when the layer-adaptive law is used

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown dropout kind {self.kind!r}")
        _check_p(self.p)
        if self.adaptive is not None:
            lo, hi = self.adaptive
            _check_p(lo)
            _check_p(hi)
            if lo > hi:
                raise DomainError(f"p_min ({lo}) exceeds p_max ({hi})")


def sample_neuron_mask(n, p, rng):
    """Independent keep bits, Bernoulli(1 - p), one per neuron."""
    _check_p(p)
    return (rng.random(n) >= p).astype(np.float64)


def sample_spatial_mask(c, p, rng):
    """One keep bit per feature map; broadcast over H x W by the caller."""
    if c < 1:
        raise DomainError("feature-map count must be at least 1")
    _check_p(p)
    return (rng.random(c) >= p).astype(np.float64)


def sample_layer_bit(p, rng):
    """A single keep bit for a whole layer."""
    _check_p(p)
    return 1.0 if rng.random() >= p else 0.0


def apply_mask(x, mask, p, rescale=True):
    """Multiply activations by a keep mask, with 1/(1-p) rescaling when p < 1.

    ``mask`` has one entry per feature (dense) or per channel (conv, spatial) or
    the full per-sample shape (conv, neuron).
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    if x.ndim == 4 and mask.ndim == 1:
        mask = mask[None, :, None, None]
    elif x.ndim == 4 and mask.ndim == 3:
        mask = mask[None]
    out = x * mask
    if rescale and p < 1.0:
        out = out * (1.0 / (1.0 - p))
    return out


def effective_scale(s, m):
    """s' = m s + (1 - m) 1: a dropped layer runs with the identity scale."""
    s = as_tensor(s)
    return s * m + (1.0 - m)


def scale_dropout_forward(x, s, m):
    """Scale modulation of x (N x C or N x C x H x W) by the masked scale vector."""
    x = as_tensor(x)
    s_eff = effective_scale(s, m)
    if x.ndim == 4:
        s_eff = s_eff.reshape(1, -1, 1, 1)
    return x * s_eff


def adaptive_p(layer_param_count, schedule, bounds):
    """Drop probability interpolated log-linearly in the layer's parameter count.

    Small layers get ``p_min``, the largest gets ``p_max``.
    """
    p_min, p_max = schedule
    n_min, n_max = bounds
    if not n_min < n_max:
        raise DomainError(f"need N_min < N_max, got ({n_min}, {n_max})")
    if not n_min <= layer_param_count <= n_max:
        raise DomainError(f"parameter count {layer_param_count} outside [{n_min}, {n_max}]")
    t = (np.log(layer_param_count) - np.log(n_min)) / (np.log(n_max) - np.log(n_min))
    return float(np.clip(p_min + (p_max - p_min) * t, p_min, p_max))


def scale_regularizer(s, lam):
    """lam * sum_i (s_i - 1)^2, pulling scales toward the identity."""
    if lam < 0:
        raise DomainError(f"regularizer weight must be nonnegative, got {lam}")
    d = as_tensor(s) - 1.0
    return (d * d).sum() * lam


@dataclass
class InvertedNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-8
    momentum: float = 0.1

    @classmethod
    def create(cls, c, eps=1e-8, momentum=0.1):
        return cls(Tensor(np.ones(c), requires_grad=True), Tensor(np.zeros(c), requires_grad=True),
                   np.zeros(c), np.ones(c), eps, momentum)

    def __post_init__(self):
        if self.eps <= 0:
            raise DomainError("eps must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise DomainError("momentum must lie in (0, 1)")
        if np.any(np.asarray(self.running_var) < 0):
            raise DomainError("running variance must be nonnegative")


def inverted_norm_forward(x, st, m_gamma, m_beta, mode="train"):
    """Affine transform first, normalization second.

    gamma' = m_gamma gamma + (1 - m_gamma), beta' = m_beta beta; dropped gains
    become ones and dropped offsets zeros. Train mode normalizes with batch
    statistics and folds them into the running estimates; infer mode uses the
    running estimates.
    """
    x = as_tensor(x)
    g_eff = st.gamma * m_gamma + (1.0 - m_gamma)
    b_eff = st.beta * m_beta
    if x.ndim == 4:
        g_eff = g_eff.reshape(1, -1, 1, 1)
        b_eff = b_eff.reshape(1, -1, 1, 1)
    z = x * g_eff + b_eff
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchStatisticsError("train-mode normalization needs at least 2 samples")
        out, mean, var = batch_normalize(z, st.eps)
        mom = st.momentum
        st.running_mean = (1.0 - mom) * st.running_mean + mom * mean
        st.running_var = (1.0 - mom) * st.running_var + mom * var
        return out
    if mode != "infer":
        raise DomainError(f"mode must be 'train' or 'infer', got {mode!r}")
    mean, var = st.running_mean, st.running_var
    if x.ndim == 4:
        mean, var = mean.reshape(1, -1, 1, 1), var.reshape(1, -1, 1, 1)
    return (z - mean) * (1.0 / np.sqrt(var + st.eps))


def mc_forward(model, x, T, rng):
    """T stochastic forward passes with every Bayesian module active.

    ``rng`` is a SeedTree; pass t draws its masks from the substream
    (pass t, module id), so the sequence is reproducible and passes are
    independent of each other. Returns a list of T logit arrays.
    """
    if T < 1:
        raise DomainError(f"pass count must be at least 1, got {T}")
    return [model.forward_pass(x, rng.child(t)) for t in range(T)]

