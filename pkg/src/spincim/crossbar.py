"""Crossbar arrays of differential binary cells, and layer-to-crossbar mapping.

Each weight occupies a cell pair: +1 -> (G_on, G_off), -1 -> (G_off, G_on).
Read voltage is normalized to 1 and every current is reported in units of
(G_on - G_off), so an ideal array returns the exact integer dot product.
Bipolar inputs are read in two phases (rows driven where x > 0, then where
x < 0) and subtracted digitally.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, DomainError

NONE, STUCK_ON, STUCK_OFF = 0, 1, 2
_FAULT_KINDS = ("stuck_off", "stuck_on", "mixed")
STRATEGIES = ("unfold_column", "kxk_grid")


@dataclass(frozen=True)
class FaultConfig:
    rate: float = 0.0
    kind: str = "stuck_off"

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise DomainError(f"fault rate must lie in [0, 1], got {self.rate}")
        if self.kind not in _FAULT_KINDS:
            raise DomainError(f"unknown fault kind {self.kind!r}")


@dataclass
class Crossbar:
    G_plus: np.ndarray
    G_minus: np.ndarray
    G_on: float
    G_off: float
    fault_plus: np.ndarray = None
    fault_minus: np.ndarray = None
    sigma_g_rel: float = 0.0
    adc_bits: int = 0

    def __post_init__(self):
        if self.fault_plus is None:
            self.fault_plus = np.zeros(self.G_plus.shape, dtype=np.int8)
        if self.fault_minus is None:
            self.fault_minus = np.zeros(self.G_minus.shape, dtype=np.int8)
        unit = self.G_on - self.G_off
        # per-cell signed weight in (G_on - G_off) units; exactly +-1 for ideal cells
        self.weff = (self.G_plus - self.G_minus) / unit

    @property
    def rows(self):
        return self.G_plus.shape[0]

    @property
    def cols(self):
        return self.G_plus.shape[1]


def _inject(G, rate, kind, G_on, G_off, rng):
    faults = np.zeros(G.shape, dtype=np.int8)
    if rate <= 0.0:
        return G, faults
    hit = rng.random(G.shape) < rate
    if kind == "stuck_off":
        faults[hit] = STUCK_OFF
    elif kind == "stuck_on":
        faults[hit] = STUCK_ON
    else:
        on = rng.random(G.shape) < 0.5
        faults[hit & on] = STUCK_ON
        faults[hit & ~on] = STUCK_OFF
    G = np.where(faults == STUCK_ON, G_on, np.where(faults == STUCK_OFF, G_off, G))
    return G, faults


def program_binary(W, G_on=2.0, G_off=1.0, fault_cfg=None, rng=None, sigma_g_rel=0.0, adc_bits=0):
    """Program a +-1 matrix (rows x cols) into a crossbar.

    Order: ideal encoding, then Gaussian relative spread per cell, then stuck-at
    faults, which override whatever was programmed.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionError(f"weight matrix must be 2-D, got shape {W.shape}")
    if not np.isin(W, (-1.0, 1.0)).all():
        raise DomainError("weights must be +-1 to program a binary crossbar")
    if not G_on > G_off > 0:
        raise DomainError("need G_on > G_off > 0")
    fault_cfg = fault_cfg or FaultConfig()
    pos = W > 0
    G_plus = np.where(pos, G_on, G_off)
    G_minus = np.where(pos, G_off, G_on)
    if sigma_g_rel > 0:
        G_plus = G_plus * (1.0 + sigma_g_rel * rng.standard_normal(W.shape))
        G_minus = G_minus * (1.0 + sigma_g_rel * rng.standard_normal(W.shape))
        floor = 1e-6 * G_off
        G_plus = np.maximum(G_plus, floor)
        G_minus = np.maximum(G_minus, floor)
    G_plus, f_plus = _inject(G_plus, fault_cfg.rate, fault_cfg.kind, G_on, G_off, rng)
    G_minus, f_minus = _inject(G_minus, fault_cfg.rate, fault_cfg.kind, G_on, G_off, rng)
    return Crossbar(G_plus, G_minus, float(G_on), float(G_off), f_plus, f_minus, sigma_g_rel, adc_bits)


def adc_quantize(current, full_scale, bits):
    """Symmetric uniform ADC over [-full_scale, full_scale] with a level at zero."""
    if bits <= 0:
        return current
    step = full_scale / (2 ** (bits - 1) - 1) if bits > 1 else full_scale
    q = step * np.rint(current / step)
    return np.clip(q, -full_scale, full_scale)


def adc_step(full_scale, bits):
    return full_scale / (2 ** (bits - 1) - 1) if bits > 1 else full_scale


def analog_mac(xb, x, active=None, counter=None):
    """Column outputs of one crossbar read.

    x: (rows,) or (P, rows) inputs, +-1, {0, 1} or real voltages.
    active: optional boolean row mask, (rows,) or (P, rows); inactive word lines
    contribute no current. Returns (cols,) or (P, cols).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.shape[1] != xb.rows:
        raise DimensionError(f"input length {x2.shape[1]} does not match crossbar rows {xb.rows}")
    act = None
    if active is not None:
        act = np.asarray(active, dtype=bool)
        if act.shape[-1] != xb.rows:
            raise DimensionError(f"active-row mask length {act.shape[-1]} does not match rows {xb.rows}")
        act = np.broadcast_to(act, x2.shape)
    pos, neg = _kernels.crossbar_mac(x2, xb.weff, act)
    if xb.adc_bits:
        fs = xb.rows * max(1.0, float(np.max(np.abs(x2))) if x2.size else 1.0)
        pos = adc_quantize(pos, fs, xb.adc_bits)
        neg = adc_quantize(neg, fs, xb.adc_bits)
    if counter is not None:
        p = x2.shape[0]
        counter.crossbar_reads += p
        counter.wordline_activations += p * xb.rows
        counter.adc_conversions += 2 * p * xb.cols
    out = pos - neg
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Mapping
# ---------------------------------------------------------------------------

@dataclass
class Tile:
    rows: np.ndarray      # logical row indices (im2col column order) feeding this crossbar
    cols: slice           # output columns covered
    offset: int = 0       # kernel offset index (ki * K + kj) under kxk_grid, else 0


@dataclass
class MappingPlan:
    strategy: str
    crossbar_dims: list
    crossbar_count: int
    dropout_module_count: int
    wordline_groups: list
    logical_dims: list = field(default_factory=list)
    tiles: list = field(default_factory=list)
    logical_rows: int = 0
    logical_cols: int = 0

    def total_mapped_weights(self):
        return sum(r * c for r, c in self.crossbar_dims)

    def records(self, max_rows=None, max_cols=None, layer=None):
        """One report record per physical crossbar."""
        out = []
        for i, (r, c) in enumerate(self.crossbar_dims):
            cap = (max_rows or r) * (max_cols or c)
            rec = {"crossbar": i, "rows": r, "cols": c, "utilization": round(r * c / cap, 6),
                   "strategy": self.strategy,
                   "dropout_modules": self.dropout_module_count if i == 0 else 0}
            if layer is not None:
                rec = {"layer": layer, **rec}
            out.append(rec)
        return out


def _chunks(n, size):
    size = size or n
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def plan_mapping(K, C_in, C_out, strategy="unfold_column", max_rows=None, max_cols=None,
                 group_size=None, dropout_modules=0):
    """Place a (C_out, C_in, K, K) kernel bank, or a dense C_in x C_out matrix (K = 1).

    unfold_column: each kernel becomes one column of a (K*K*C_in) x C_out array.
    kxk_grid: K*K crossbars of C_in x C_out, one per kernel offset.
    Arrays larger than max_rows x max_cols are tiled, partial sums added digitally.
    ``group_size`` sets how many consecutive logical rows share a word-line
    group (default K*K: one group per input channel).
    """
    if min(K, C_in, C_out) < 1:
        raise DomainError(f"dimensions must be positive, got K={K}, C_in={C_in}, C_out={C_out}")
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown mapping strategy {strategy!r}")
    kk = K * K
    rows_total = kk * C_in
    tiles, dims, logical = [], [], []
    if strategy == "unfold_column" or K == 1:
        logical.append((rows_total, C_out))
        for r0, r1 in _chunks(rows_total, max_rows):
            for c0, c1 in _chunks(C_out, max_cols):
                tiles.append(Tile(np.arange(r0, r1), slice(c0, c1)))
                dims.append((r1 - r0, c1 - c0))
    else:
        for off in range(kk):
            logical.append((C_in, C_out))
            rows = np.arange(C_in) * kk + off
            for r0, r1 in _chunks(C_in, max_rows):
                for c0, c1 in _chunks(C_out, max_cols):
                    tiles.append(Tile(rows[r0:r1], slice(c0, c1), off))
                    dims.append((r1 - r0, c1 - c0))
    group_size = group_size or kk
    groups = [np.arange(g, min(g + group_size, rows_total)) for g in range(0, rows_total, group_size)]
    return MappingPlan(strategy, dims, len(dims), dropout_modules, groups,
                       logical, tiles, rows_total, C_out)


def plan_conv_mapping(K, C_in, C_out, strategy="unfold_column", max_rows=None, max_cols=None,
                      method=None, in_hw=1):
    """Mapping plan for a conv layer, with the dropout modules its input side needs."""
    modules = {None: 0, "neuron": C_in * in_hw, "spatial": C_in, "scale": 1, "affine": 2}.get(method, 0)
    return plan_mapping(K, C_in, C_out, strategy, max_rows, max_cols, dropout_modules=modules)


def wordline_group_enable(plan, dropout_mask):
    """Boolean vector over logical rows: False for rows in dropped groups."""
    mask = np.asarray(dropout_mask).reshape(-1)
    if mask.size != len(plan.wordline_groups):
        raise DimensionError(f"mask length {mask.size} does not match {len(plan.wordline_groups)} word-line groups")
    active = np.ones(plan.logical_rows, dtype=bool)
    for keep, rows in zip(mask, plan.wordline_groups):
        if not keep:
            active[rows] = False
    return active


class MappedLayer:
    """A weight matrix spread over the physical crossbars of a mapping plan."""

    def __init__(self, W_logical, plan, G_on=2.0, G_off=1.0, fault_cfg=None, rng=None,
                 sigma_g_rel=0.0, adc_bits=0):
        W_logical = np.asarray(W_logical, dtype=np.float64)
        if W_logical.shape != (plan.logical_rows, plan.logical_cols):
            raise DimensionError(f"weights {W_logical.shape} do not match plan "
                                 f"{(plan.logical_rows, plan.logical_cols)}")
        self.plan = plan
        self.xbars = [program_binary(W_logical[t.rows][:, t.cols], G_on, G_off, fault_cfg, rng,
                                     sigma_g_rel, adc_bits) for t in plan.tiles]

    def mac(self, x, active=None, counter=None):
        """x: (P, logical_rows); active: None, (logical_rows,) or (P, logical_rows)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.plan.logical_rows:
            raise DimensionError(f"input shape {x.shape} does not match {self.plan.logical_rows} logical rows")
        out = np.zeros((x.shape[0], self.plan.logical_cols))
        for tile, xb in zip(self.plan.tiles, self.xbars):
            a = None
            if active is not None:
                a = active[..., tile.rows]
            out[:, tile.cols] += analog_mac(xb, x[:, tile.rows], a, counter)
        return out
