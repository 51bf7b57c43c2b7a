"""Variational subset inference over scale vectors, and its in-memory bank approximation.

Weights stay deterministic and binary; only the per-channel scale carries a
Gaussian posterior. For deployment the posterior is replaced by a bank of M
quantized samples stored on multi-level crossbars, and a one-hot arbiter picks
one bank instance per layer per forward pass.
"""

from dataclasses import dataclass

import numpy as np

from .device import dequantize_level, quantize_to_level
from .dropout import scale_dropout_forward
from .errors import DomainError
from .tensor import Tensor, as_tensor, inverse_softplus, softplus


@dataclass
class PriorSpec:
    mu0: float = 1.0
    sigma0: float = 0.1

    def __post_init__(self):
        if not self.sigma0 > 0:
            raise DomainError(f"prior sigma must be positive, got {self.sigma0}")


class ScalePosterior:
    """Diagonal Gaussian over a scale vector; sigma = softplus(rho) > 0."""

    def __init__(self, mu, rho):
        self.mu = mu if isinstance(mu, Tensor) else Tensor(mu, requires_grad=True)
        self.rho = rho if isinstance(rho, Tensor) else Tensor(rho, requires_grad=True)

    @classmethod
    def create(cls, c, mu0=1.0, sigma0=0.05):
        return cls(np.full(c, float(mu0)), np.full(c, float(inverse_softplus(sigma0))))

    @property
    def sigma(self):
        return softplus(self.rho)

    def __len__(self):
        return self.mu.shape[0]


def sample_scale(post, rng, eps=None):
    """s = mu + sigma * eps with eps ~ N(0, I); differentiable in (mu, rho).

    Pass ``eps`` to freeze the noise.
    """
    if eps is None:
        eps = rng.standard_normal(len(post))
    return post.mu + post.sigma * np.asarray(eps, dtype=np.float64)


def kl_gauss(mu_q, sigma_q, mu_p, sigma_p):
    """KL(q || p) between diagonal Gaussians, summed over components."""
    mu_q, sigma_q = as_tensor(mu_q), as_tensor(sigma_q)
    mu_p = np.asarray(mu_p, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if np.any(sigma_q.data <= 0) or np.any(sigma_p <= 0):
        raise DomainError("standard deviations must be positive")
    d = mu_q - mu_p
    terms = (sigma_q * (1.0 / sigma_p)).log() * -1.0 \
        + (sigma_q * sigma_q + d * d) * (1.0 / (2.0 * sigma_p * sigma_p)) - 0.5
    return terms.sum()


def posterior_kl(post, prior):
    return kl_gauss(post.mu, post.sigma, prior.mu0, prior.sigma0)


def elbo_loss(ce, kl, lam_kl, n_batches):
    """ce + lam_kl * kl / n_batches."""
    if lam_kl < 0:
        raise DomainError(f"KL weight must be nonnegative, got {lam_kl}")
    return as_tensor(ce) + as_tensor(kl) * (lam_kl / n_batches)


def kl_anneal(epoch, epochs, lam_max=1.0, warmup=0.3):
    """Linear ramp of the KL weight over the first ``warmup`` fraction of epochs."""
    ramp = max(1.0, warmup * epochs)
    return lam_max * min(1.0, (epoch + 1) / ramp)


@dataclass
class CrossbarBank:
    """M quantized scale-vector instances stored as level indices."""

    levels: np.ndarray      # (M, C) integer indices in [0, L]
    L: int
    value_range: tuple

    def __post_init__(self):
        self.levels = np.asarray(self.levels)
        if self.levels.ndim != 2 or self.levels.shape[0] < 1:
            raise DomainError("bank needs at least one instance")
        if self.levels.min() < 0 or self.levels.max() > self.L:
            raise DomainError(f"level index outside [0, {self.L}]")

    @property
    def M(self):
        return self.levels.shape[0]

    def instance(self, k):
        return dequantize_level(self.levels[k], self.value_range, self.L)

    def values(self):
        return dequantize_level(self.levels, self.value_range, self.L)


def default_bank_range(post, width=4.0):
    """[min(mu - w sigma), max(mu + w sigma)] over all channels."""
    mu = post.mu.data
    sigma = post.sigma.data
    lo, hi = float(np.min(mu - width * sigma)), float(np.max(mu + width * sigma))
    if hi <= lo:
        hi = lo + 1e-12
    return lo, hi


def build_bank(post, M, L, value_range, rng):
    """Draw M posterior samples and quantize each channel to L + 1 levels."""
    if M < 1 or L < 1:
        raise DomainError(f"need M >= 1 and L >= 1, got M={M}, L={L}")
    lo, hi = value_range
    if not lo < hi:
        raise DomainError(f"empty range ({lo}, {hi})")
    mu = post.mu.data
    sigma = post.sigma.data
    draws = mu[None, :] + sigma[None, :] * rng.standard_normal((M, len(post)))
    idx = quantize_to_level(draws, (lo, hi), L)
    dtype = np.uint8 if L <= 255 else np.uint16
    return CrossbarBank(idx.astype(dtype), L, (float(lo), float(hi)))


def arbiter_select(M, rng):
    """Uniform one-hot selector over M bank instances."""
    if M < 1:
        raise DomainError(f"arbiter needs M >= 1, got {M}")
    sel = np.zeros(M, dtype=np.uint8)
    sel[int(rng.integers(0, M))] = 1
    return sel


def bank_forward(x, bank, sel):
    """Scale-modulate x by the bank instance picked by the one-hot ``sel``."""
    sel = np.asarray(sel)
    if sel.shape != (bank.M,) or not np.isin(sel, (0, 1)).all() or int(sel.sum()) != 1:
        raise DomainError("selector must be a one-hot vector of length M")
    s = bank.instance(int(np.argmax(sel)))
    return scale_dropout_forward(x, Tensor(s), 1.0)
