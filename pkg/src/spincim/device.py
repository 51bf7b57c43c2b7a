"""Stochastic MTJ device models.

Switching follows a thermally activated law,

    p(I, t) = 1 - exp(-(t / tau0) * exp(delta * (I / I_c - 1))),

which is monotone in current and pulse width. The law sits behind
``SwitchingModel`` so a measured lookup table can replace it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class MtjParams:
    I_c: float = 1.0
    tau0: float = 1.0
    delta: float = 40.0

    def __post_init__(self):
        for name in ("I_c", "tau0", "delta"):
            if not getattr(self, name) > 0:
                raise DomainError(f"MtjParams.{name} must be positive, got {getattr(self, name)}")


class SwitchingModel:
    """Thermal-activation switching law; subclass to plug in measured data."""

    def probability(self, current, t, params):
        return switching_probability(current, t, params)

    def current_for(self, p_target, t, params):
        return calibrate_current(p_target, t, params)


def switching_probability(current, t, params):
    if not t > 0:
        raise DomainError(f"pulse width must be positive, got {t}")
    rate = np.exp(params.delta * (np.asarray(current, dtype=np.float64) / params.I_c - 1.0))
    p = -np.expm1(-(t / params.tau0) * rate)
    return float(p) if np.ndim(p) == 0 else p


def calibrate_current(p_target, t, params):
    """Current that switches with probability ``p_target`` for a pulse of width t."""
    p = np.asarray(p_target, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError(f"target probability must lie in (0, 1), got {p_target}")
    if not t > 0:
        raise DomainError(f"pulse width must be positive, got {t}")
    current = params.I_c * (1.0 + np.log(-np.log1p(-p) * params.tau0 / t) / params.delta)
    return float(current) if current.ndim == 0 else current


@dataclass
class DropoutModuleState:
    nominal_p: float
    realized_p: float
    sigma_p: float = 0.0

    def __post_init__(self):
        self.realized_p = min(1.0, max(0.0, float(self.realized_p)))


def sample_module_probability(nominal_p, sigma_p, rng, size=None):
    """Device-to-device spread: N(nominal, sigma^2) clamped to [0, 1].

    Drawn once per physical module when a chip instance is built.
    """
    if sigma_p < 0:
        raise DomainError(f"sigma_p must be nonnegative, got {sigma_p}")
    if sigma_p == 0:
        return float(nominal_p) if size is None else np.full(size, float(nominal_p))
    draw = nominal_p + sigma_p * rng.standard_normal(size)
    return np.clip(draw, 0.0, 1.0) if size is not None else float(np.clip(draw, 0.0, 1.0))


def sample_module_probability_ic(nominal_p, sigma_ic_rel, t, params, rng, size=None):
    """Alternative spread model: the critical current varies, the drive current is fixed."""
    drive = calibrate_current(nominal_p, t, params)
    ic = params.I_c * (1.0 + sigma_ic_rel * rng.standard_normal(size))
    ic = np.maximum(ic, 1e-12)
    rate = np.exp(params.delta * (drive / ic - 1.0))
    p = -np.expm1(-(t / params.tau0) * rate)
    return float(p) if size is None else p


def generate_bitstream(mod, n, rng, ledger=None):
    """n SET / read / RESET cycles; a 1 means the junction switched.

    RESET is deterministic, so successive bits are independent Bernoulli
    draws. ``ledger`` (an EventCounts) is charged one RNG bit per cycle.
    """
    if n < 1:
        raise DomainError(f"bit count must be at least 1, got {n}")
    p = np.asarray(mod.realized_p, dtype=np.float64)
    bits = (rng.random(n) < p).astype(np.uint8)
    if ledger is not None:
        ledger.rng_bits += n
    return bits


@dataclass(frozen=True)
class MultiLevelCell:
    L: int
    G_on: float
    G_off: float
    k: int = 0

    def __post_init__(self):
        if not self.G_on > self.G_off > 0:
            raise DomainError("need G_on > G_off > 0")
        if not 0 <= self.k <= self.L:
            raise DomainError(f"ON count k={self.k} outside [0, {self.L}]")


def multilevel_conductance(cell):
    """Parallel composition: k devices ON, L - k OFF."""
    return cell.k * cell.G_on + (cell.L - cell.k) * cell.G_off


def quantize_to_level(v, value_range, L):
    """Nearest of L + 1 uniform levels over [lo, hi]; ties to even; clamped."""
    lo, hi = value_range
    if not lo < hi:
        raise DomainError(f"empty range ({lo}, {hi})")
    idx = np.rint((np.asarray(v, dtype=np.float64) - lo) / (hi - lo) * L)
    idx = np.clip(idx, 0, L).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


def dequantize_level(idx, value_range, L):
    lo, hi = value_range
    return lo + np.asarray(idx, dtype=np.float64) * ((hi - lo) / L)


def level_step(value_range, L):
    lo, hi = value_range
    return (hi - lo) / L


def lag1_autocorrelation(bits):
    x = np.asarray(bits, dtype=np.float64)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    return 0.0 if denom == 0 else float(np.dot(x[:-1], x[1:]) / denom)


def binomial_band(n, p, k=3.0):
    """(lo, hi) bounds on a Bernoulli(p) frequency at k standard deviations."""
    sd = math.sqrt(p * (1.0 - p) / n)
    return p - k * sd, p + k * sd
