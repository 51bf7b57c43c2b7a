"""Binary Bayesian networks built from a layer list, runnable in math or device mode.

Every weighted layer computes

    mac  = binary MAC of its (possibly masked) input          # crossbar in device mode
    pre  = mac * rescale * 1/sqrt(fan_in)
    post = method-specific modulation of pre
    out  = sign(post) for hidden layers (STE in training), post for the last

where the modulation is the scale vector (deterministic, dropped or sampled)
plus a bias, or an inverted normalization for the affine method. Neuron and
spatial dropout act on a hidden layer's output, i.e. on the word lines of the
next crossbar.

Math and device mode differ only in how ``mac`` is produced, so with ideal
devices both produce bit-identical results.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .binarize import binarize, sign_ste
from .crossbar import FaultConfig, MappedLayer, plan_mapping, wordline_group_enable
from .device import sample_module_probability
from .dropout import InvertedNormState, adaptive_p, inverted_norm_forward, sample_layer_bit
from .errors import DimensionError, DomainError
from .rng import DOMAIN_DEVICE, DOMAIN_INIT, CountingGenerator, SeedTree
from .tensor import (Parameter, Tensor, as_tensor, conv_out_size, hardtanh, im2col, inverse_softplus,
                     maxpool2d, softplus)
from .vi import PriorSpec, ScalePosterior, arbiter_select, build_bank, default_bank_range, posterior_kl

METHODS = ("spindrop", "spatial", "scaledrop", "affine", "vi_subset", "spinbayes")
DROPOUT_KIND = {"spindrop": "neuron", "spatial": "spatial", "scaledrop": "scale", "affine": "affine",
                "vi_subset": None, "spinbayes": None}
LAYER_KINDS = ("dense", "conv", "pool", "flatten")

# module slots inside a layer's substream namespace
SLOT_MASK, SLOT_BETA, SLOT_EPS, SLOT_ARBITER = 0, 1, 2, 3


@dataclass
class LayerSpec:
    kind: str
    size: int = 0           # units, output channels, or pooling window
    kernel: int = 1
    padding: int = 0
    binary_weights: bool = True
    binary_act: bool = True  # hidden output through sign(); ignored on the last layer
    bayes: bool = False      # hosts the method's Bayesian module(s)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise DomainError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("dense", "conv", "pool") and self.size < 1:
            raise DomainError(f"{self.kind} layer needs a positive size")

    @property
    def weighted(self):
        return self.kind in ("dense", "conv")


@dataclass
class ModelSpec:
    input_shape: tuple
    layers: list
    method: str = "scaledrop"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if not self.weighted_indices():
            raise DomainError("model needs at least one weighted layer")
        self.shapes()

    def weighted_indices(self):
        return [i for i, l in enumerate(self.layers) if l.weighted]

    def last_weighted(self):
        return self.weighted_indices()[-1]

    def shapes(self):
        """(input shape, output shape) per layer, excluding the batch axis."""
        out, shape = [], self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "dense":
                if len(shape) != 1:
                    raise DimensionError(f"layer {i}: dense layer needs a flat input, got {shape}")
                new = (layer.size,)
            elif layer.kind == "conv":
                if len(shape) != 3:
                    raise DimensionError(f"layer {i}: conv layer needs a (C, H, W) input, got {shape}")
                c, h, w = shape
                ho = conv_out_size(h, layer.kernel, layer.padding, 1)
                wo = conv_out_size(w, layer.kernel, layer.padding, 1)
                if ho < 1 or wo < 1:
                    raise DimensionError(f"layer {i}: kernel larger than padded input")
                new = (layer.size, ho, wo)
            elif layer.kind == "pool":
                if len(shape) != 3:
                    raise DimensionError(f"layer {i}: pooling needs a (C, H, W) input")
                new = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            else:
                new = (int(np.prod(shape)),)
            out.append((shape, new))
            shape = new
        return out

    def fan_in(self, i):
        shape_in = self.shapes()[i][0]
        layer = self.layers[i]
        return shape_in[0] if layer.kind == "dense" else shape_in[0] * layer.kernel ** 2

    def param_count(self, i):
        """Weights of a weighted layer."""
        return self.fan_in(i) * self.layers[i].size

    def input_source(self, i):
        """Weighted layer producing the input of weighted layer i, plus its output shape, or None."""
        shapes = self.shapes()
        for j in range(i - 1, -1, -1):
            if self.layers[j].weighted:
                return j, shapes[i][0]
        return None

    def row_group_size(self, i):
        """Logical crossbar rows per input channel of weighted layer i."""
        layer = self.layers[i]
        if layer.kind == "conv":
            return layer.kernel ** 2
        src = self.input_source(i)
        if src is None:
            return 1
        j, _ = src
        out_shape = self.shapes()[j][1]
        if len(out_shape) == 3:
            # conv output flattened (after optional pooling): one channel spans H*W rows
            flat = self.shapes()[i][0][0]
            return flat // out_shape[0]
        return 1


def build_model_spec(input_shape, layer_tokens, method, binarize_activations=True, real_first_last=True):
    """Assemble a ModelSpec from tokens like ``conv:32:3:1``, ``pool:2``, ``flatten``, ``dense:10``."""
    layers = []
    for tok in layer_tokens:
        parts = [p.strip() for p in tok.strip().split(":")]
        kind = parts[0]
        if kind == "dense":
            layers.append(LayerSpec("dense", int(parts[1])))
        elif kind == "conv":
            k = int(parts[2]) if len(parts) > 2 else 3
            pad = int(parts[3]) if len(parts) > 3 else k // 2
            layers.append(LayerSpec("conv", int(parts[1]), kernel=k, padding=pad))
        elif kind == "pool":
            layers.append(LayerSpec("pool", int(parts[1]) if len(parts) > 1 else 2))
        elif kind == "flatten":
            layers.append(LayerSpec("flatten"))
        else:
            raise DomainError(f"unknown layer token {tok!r}")
    weighted = [i for i, l in enumerate(layers) if l.weighted]
    if not weighted:
        raise DomainError("model needs at least one weighted layer")
    first, last = weighted[0], weighted[-1]
    for i in weighted:
        l = layers[i]
        l.binary_weights = not (real_first_last and i in (first, last))
        l.binary_act = binarize_activations
    spec = ModelSpec(tuple(input_shape), layers, method)
    _assign_bayes(spec)
    return spec


def _assign_bayes(spec):
    """Which weighted layers host the method's modules.

    scale-type methods: every weighted layer. neuron/spatial: hidden layers.
    affine: binary hidden layers; a real-valued input layer keeps a plain
    scale and bias, since normalization after its affine map would pin every
    decision boundary to the batch mean.
    """
    weighted = spec.weighted_indices()
    all_layers = spec.method in ("scaledrop", "vi_subset", "spinbayes")
    for i in weighted:
        l = spec.layers[i]
        l.bayes = all_layers or i != weighted[-1]
        if spec.method == "affine" and not l.binary_weights:
            l.bayes = False


@dataclass
class MethodParams:
    p: float = 0.2
    adaptive: bool = False
    p_min: float = 0.05
    p_max: float = 0.25
    prior: PriorSpec = field(default_factory=PriorSpec)
    posterior_sigma0: float = 0.05
    bank_size: int = 8
    bank_levels: int = 15
    norm_eps: float = 1e-8
    norm_momentum: float = 0.1


@dataclass
class DeviceSetup:
    """Parameters for instantiating one simulated chip."""

    G_on: float = 2.0
    G_off: float = 1.0
    sigma_g_rel: float = 0.0
    adc_bits: int = 0
    fault_rate: float = 0.0
    fault_kind: str = "stuck_off"
    strategy: str = "unfold_column"
    max_rows: int = None
    max_cols: int = None
    sigma_p: float = 0.0


class EventCounts:
    """Hardware event ledger; dynamic counters grow during instrumented runs."""

    DYNAMIC = ("rng_bits", "crossbar_reads", "wordline_activations", "scale_memory_reads", "adc_conversions")

    def __init__(self, **kw):
        for k in self.DYNAMIC:
            setattr(self, k, int(kw.pop(k, 0)))
        self.dropout_modules = int(kw.pop("dropout_modules", 0))
        self.parameter_bits = int(kw.pop("parameter_bits", 0))
        if kw:
            raise DomainError(f"unknown event kinds {sorted(kw)}")
        if any(v < 0 for v in self.as_dict().values()):
            raise DomainError("event counts must be nonnegative")

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.DYNAMIC}
        d["dropout_modules"] = self.dropout_modules
        d["parameter_bits"] = self.parameter_bits
        return d

    def __eq__(self, other):
        return isinstance(other, EventCounts) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"EventCounts({self.as_dict()})"


class BayesNet:
    """Parameters and forward passes for a ModelSpec."""

    def __init__(self, spec, hp=None, seed=0):
        self.spec = spec
        self.hp = hp or MethodParams()
        self.params = {}
        self.norms = {}
        self.posteriors = {}
        self.banks = {}
        self.drop_p = {}
        self.device = None
        self._init_params(SeedTree(seed, (DOMAIN_INIT,)))

    @property
    def method(self):
        return self.spec.method

    @property
    def kind(self):
        return DROPOUT_KIND[self.method]

    # -- construction ----------------------------------------------------------------
    def _add(self, name, data, role, binary=False):
        p = Parameter(Tensor(np.asarray(data, dtype=np.float64), requires_grad=True), role, binary=binary, name=name)
        self.params[name] = p
        return p

    def _init_params(self, tree):
        spec, hp = self.spec, self.hp
        weighted = spec.weighted_indices()
        counts = [spec.param_count(i) for i in weighted]
        for i in weighted:
            layer = spec.layers[i]
            rng = tree.child(i).generator()
            fan = spec.fan_in(i)
            if layer.binary_weights:
                w = rng.uniform(-0.5, 0.5, size=(fan, layer.size))
            else:
                w = rng.standard_normal((fan, layer.size))
            self._add(f"L{i}.weight", w, "weight", binary=layer.binary_weights)
            c = layer.size
            if self.method == "affine" and layer.bayes:
                st = InvertedNormState.create(c, hp.norm_eps, hp.norm_momentum)
                self.norms[i] = st
                self.params[f"L{i}.gamma"] = Parameter(st.gamma, "affine_gamma", name=f"L{i}.gamma")
                self.params[f"L{i}.beta"] = Parameter(st.beta, "affine_beta", name=f"L{i}.beta")
            elif self.method in ("vi_subset", "spinbayes") and layer.bayes:
                post = ScalePosterior.create(c, hp.prior.mu0, hp.posterior_sigma0)
                self.posteriors[i] = post
                self.params[f"L{i}.mu"] = Parameter(post.mu, "posterior_mu", name=f"L{i}.mu")
                self.params[f"L{i}.rho"] = Parameter(post.rho, "posterior_sigma", name=f"L{i}.rho")
                self._add(f"L{i}.bias", np.zeros(c), "bias")
            else:
                self._add(f"L{i}.scale", np.full(c, float(inverse_softplus(1.0))), "scale")
                self._add(f"L{i}.bias", np.zeros(c), "bias")
            if layer.bayes and self.kind in ("neuron", "spatial", "scale", "affine"):
                if hp.adaptive and len(set(counts)) > 1:
                    p = adaptive_p(spec.param_count(i), (hp.p_min, hp.p_max), (min(counts), max(counts)))
                elif hp.adaptive:
                    p = 0.5 * (hp.p_min + hp.p_max)
                else:
                    p = hp.p
                self.drop_p[i] = p

    def parameters(self):
        return list(self.params.values())

    def scale_vector(self, i):
        return softplus(self.params[f"L{i}.scale"].value)

    def scale_vectors(self):
        return [self.scale_vector(i) for i in self.spec.weighted_indices() if f"L{i}.scale" in self.params]

    def kl(self):
        total = Tensor(0.0)
        for post in self.posteriors.values():
            total = total + posterior_kl(post, self.hp.prior)
        return total

    def clip_latent(self, clip=1.0):
        for p in self.params.values():
            if p.binary:
                np.clip(p.value.data, -clip, clip, out=p.value.data)

    # -- SpinBayes ---------------------------------------------------------------
    def build_banks(self, seed, M=None, L=None):
        M = M or self.hp.bank_size
        L = L or self.hp.bank_levels
        tree = SeedTree(seed, (DOMAIN_DEVICE, 99))
        self.banks = {}
        for i, post in self.posteriors.items():
            self.banks[i] = build_bank(post, M, L, default_bank_range(post), tree.child(i).generator())

    # -- device instantiation ------------------------------------------------------
    def layer_plan(self, i, setup):
        return layer_plan(self.spec, i, setup)

    def logical_weights(self, i):
        layer = self.spec.layers[i]
        w = self.params[f"L{i}.weight"].value.data
        return binarize(w) if layer.binary_weights else w

    def program_device(self, setup, seed):
        """Instantiate a chip: program crossbars and draw per-module probabilities."""
        tree = SeedTree(seed, (DOMAIN_DEVICE,))
        fault = FaultConfig(setup.fault_rate, setup.fault_kind)
        xbars, plans, realized = {}, {}, {}
        for i in self.spec.weighted_indices():
            layer = self.spec.layers[i]
            plan = self.layer_plan(i, setup)
            plans[i] = plan
            if layer.binary_weights:
                xbars[i] = MappedLayer(self.logical_weights(i), plan, setup.G_on, setup.G_off, fault,
                                       tree.child(i, 0).generator(), setup.sigma_g_rel, setup.adc_bits)
            if i in self.drop_p:
                n = module_count_for_output(self.spec, i, self.kind)
                realized[i] = np.atleast_1d(sample_module_probability(
                    self.drop_p[i], setup.sigma_p, tree.child(i, 1).generator(), size=n))
        self.device = {"setup": setup, "xbars": xbars, "plans": plans, "realized_p": realized}

    # -- forward -------------------------------------------------------------------
    def forward(self, x, streams=None, train=False, stochastic=True, backend="math", counter=None):
        """Logits for a batch.

        streams: SeedTree for this pass (module m of layer i uses streams.child(i, m)).
        train: batch statistics for normalization, per-example neuron/spatial masks.
        stochastic: Bayesian modules active; False gives the deterministic network.
        backend: 'math' or 'device' (requires program_device()).
        """
        if backend == "device" and self.device is None:
            raise DomainError("program_device() must run before device-mode inference")
        if stochastic and streams is None:
            raise DomainError("stochastic forward needs a SeedTree")
        spec = self.spec
        h = as_tensor(x)
        if h.shape[1:] != spec.input_shape:
            raise DimensionError(f"input shape {h.shape[1:]} does not match model input {spec.input_shape}")
        n = h.shape[0]
        last = spec.last_weighted()
        pending = None  # (producer layer, drop probability)
        for i, layer in enumerate(spec.layers):
            if layer.kind == "pool":
                h = maxpool2d(h, layer.size)
                continue
            if layer.kind == "flatten":
                h = h.reshape(n, -1)
                continue
            mask, p_in = None, 0.0
            if pending is not None and stochastic:
                j, p_in = pending
                mask = self._input_mask(j, i, h.shape[1:], n, train, streams, backend, counter)
            pending = None
            mac = self._mac(i, h, mask, backend, counter)
            if mask is not None and p_in < 1.0:
                mac = mac * (1.0 / (1.0 - p_in))
            pre = mac * (1.0 / np.sqrt(spec.fan_in(i)))
            post = self._modulate(i, pre, train, stochastic, streams, backend, counter)
            if i == last:
                h = post
                break
            h = sign_ste(post) if layer.binary_act else hardtanh(post)
            if layer.bayes and self.kind in ("neuron", "spatial"):
                pending = (i, self.drop_p[i])
        return h

    def forward_pass(self, x, streams, backend="math", counter=None):
        """One stochastic inference pass; returns logits as an ndarray."""
        from .tensor import no_grad
        with no_grad():
            return self.forward(x, streams, train=False, stochastic=True, backend=backend, counter=counter).data

    def _gen(self, streams, i, slot, counter):
        g = streams.child(i, slot).generator()
        return CountingGenerator(g, counter) if counter is not None else g

    def _drop_p(self, j, backend):
        if backend == "device":
            return self.device["realized_p"][j]
        return self.drop_p[j]

    def _input_mask(self, j, i, in_shape, n, train, streams, backend, counter):
        """Keep mask for the output of hidden layer j, as seen by the input of layer i."""
        rng = self._gen(streams, j, SLOT_MASK, counter)
        p = self._drop_p(j, backend)
        out_shape = self.spec.shapes()[j][1]
        spatial = self.kind == "spatial" and len(out_shape) == 3
        units = out_shape[0] if spatial else None
        if train:
            shape = (n, units) if spatial else (n,) + tuple(in_shape)
            keep = (rng.random(shape) >= self.drop_p[j]).astype(np.float64)
            if spatial and len(in_shape) == 1:
                keep = np.repeat(keep, in_shape[0] // units, axis=1)
            return keep
        if spatial:
            keep = (rng.random(units) >= p).astype(np.float64)
            if len(in_shape) == 1:
                keep = np.repeat(keep, in_shape[0] // units)
            return keep
        size = int(np.prod(in_shape))
        keep = (rng.random(size) >= (p if np.ndim(p) == 0 else np.resize(p, size))).astype(np.float64)
        return keep.reshape(in_shape)

    def _mask_input(self, h, mask):
        if mask is None:
            return h
        m = mask
        if h.ndim == 4:
            if m.ndim == 1:
                m = m[None, :, None, None]
            elif m.ndim == 2:
                m = m[:, :, None, None]
            elif m.ndim == 3:
                m = m[None]
        elif m.ndim == 1:
            m = m[None, :]
        return h * m

    def _mac(self, i, h, mask, backend, counter):
        layer = self.spec.layers[i]
        W = self.params[f"L{i}.weight"].value
        Wb = sign_ste(W) if layer.binary_weights else W
        use_xbar = backend == "device" and i in self.device["xbars"]
        if layer.kind == "dense":
            if use_xbar:
                active = None
                if mask is not None:
                    active = np.broadcast_to(mask > 0, h.shape) if mask.ndim > 1 else mask > 0
                return Tensor(self.device["xbars"][i].mac(h.data, active, counter))
            return self._mask_input(h, mask) @ Wb
        n = h.shape[0]
        c_out, k, pad = layer.size, layer.kernel, layer.padding
        ho, wo = self.spec.shapes()[i][1][1:]
        if use_xbar:
            cols = im2col(h.data, k, pad).data
            active = None
            if mask is not None:
                if mask.ndim == 1:
                    active = wordline_group_enable(self.device["plans"][i], mask)
                else:
                    m = mask if mask.ndim == 4 else np.broadcast_to(mask[None], h.shape)
                    active = im2col(np.ascontiguousarray(m), k, pad).data > 0
            out = self.device["xbars"][i].mac(cols, active, counter)
            return Tensor(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))
        cols = im2col(self._mask_input(h, mask), k, pad)
        return (cols @ Wb).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)

    def _channel(self, t, ndim):
        return t.reshape(1, -1, 1, 1) if ndim == 4 else t

    def _modulate(self, i, pre, train, stochastic, streams, backend, counter):
        layer = self.spec.layers[i]
        c = layer.size
        if i in self.norms:
            st = self.norms[i]
            m_g = m_b = 1.0
            if stochastic:
                p = self._drop_p(i, backend)
                p = float(np.atleast_1d(p)[0])
                m_g = sample_layer_bit(p, self._gen(streams, i, SLOT_MASK, counter))
                m_b = sample_layer_bit(p, self._gen(streams, i, SLOT_BETA, counter))
            if counter is not None:
                counter.scale_memory_reads += 2 * c
            return inverted_norm_forward(pre, st, m_g, m_b, "train" if train else "infer")
        bias = self._channel(self.params[f"L{i}.bias"].value, pre.ndim)
        if i in self.posteriors:
            post = self.posteriors[i]
            if i in self.banks and not train:
                bank = self.banks[i]
                if stochastic:
                    sel = arbiter_select(bank.M, self._gen(streams, i, SLOT_ARBITER, counter))
                    s = Tensor(bank.instance(int(np.argmax(sel))))
                else:
                    s = Tensor(bank.values().mean(axis=0))
                if counter is not None:
                    counter.scale_memory_reads += c
            else:
                if stochastic:
                    eps = self._gen(streams, i, SLOT_EPS, counter).standard_normal(c)
                    s = post.mu + post.sigma * eps
                else:
                    s = post.mu
                if counter is not None:
                    counter.scale_memory_reads += 2 * c
            return pre * self._channel(s, pre.ndim) + bias
        s = self.scale_vector(i)
        if counter is not None:
            counter.scale_memory_reads += c
        if self.kind == "scale" and layer.bayes and stochastic:
            p = float(np.atleast_1d(self._drop_p(i, backend))[0])
            m = sample_layer_bit(p, self._gen(streams, i, SLOT_MASK, counter))
            s = s * m + (1.0 - m)
        return pre * self._channel(s, pre.ndim) + bias


def module_count_for_output(spec, i, kind):
    """Dropout modules attached to weighted layer i under a dropout kind."""
    layer = spec.layers[i]
    if kind == "scale":
        return 1
    if kind == "affine":
        return 2
    if kind not in ("neuron", "spatial"):
        return 0
    # neuron/spatial modules gate the output as consumed by the next weighted layer
    shapes = spec.shapes()
    out_shape = shapes[i][1]
    nxt = [k for k in spec.weighted_indices() if k > i]
    consumed = shapes[nxt[0]][0] if nxt else out_shape
    if kind == "spatial" and len(out_shape) == 3:
        return out_shape[0]
    if kind == "spatial":
        return layer.size
    return int(np.prod(consumed))


def input_module_count(spec, i):
    """Dropout modules gating the word lines of weighted layer i."""
    kind = DROPOUT_KIND[spec.method]
    src = spec.input_source(i)
    if src is None or kind not in ("neuron", "spatial"):
        return 0
    j, _ = src
    if not spec.layers[j].bayes:
        return 0
    return module_count_for_output(spec, j, kind)


def layer_plan(spec, i, setup):
    """Crossbar mapping of weighted layer i under a device setup."""
    layer = spec.layers[i]
    c_in = spec.shapes()[i][0][0]
    k = layer.kernel if layer.kind == "conv" else 1
    return plan_mapping(k, c_in, layer.size, setup.strategy, setup.max_rows, setup.max_cols,
                        group_size=spec.row_group_size(i), dropout_modules=input_module_count(spec, i))


def with_method(spec, method):
    """Same architecture with the Bayesian flags re-derived for another method."""
    new = ModelSpec(spec.input_shape, [replace(l) for l in spec.layers], method)
    _assign_bayes(new)
    return new
