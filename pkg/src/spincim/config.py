"""INI run configuration: schema, validation and conversion to runtime objects.

Sections: [model], [method], [device], [crossbar], [train]. Unknown sections
or keys and out-of-range values raise ConfigError naming ``section.key``.
"""

import configparser
from dataclasses import dataclass, field

from .crossbar import STRATEGIES
from .device import MtjParams
from .errors import ConfigError
from .model import METHODS, DeviceSetup, MethodParams, build_model_spec
from .train import TrainParams
from .vi import PriorSpec


def _int(lo=None, hi=None):
    def conv(s):
        v = int(s)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ValueError(f"must lie in [{lo}, {hi}]")
        return v
    return conv


def _float(lo=None, hi=None, open_lo=False):
    def conv(s):
        v = float(s)
        if v != v:
            raise ValueError("NaN not allowed")
        if lo is not None and (v < lo or (open_lo and v == lo)):
            raise ValueError(f"must be {'>' if open_lo else '>='} {lo}")
        if hi is not None and v > hi:
            raise ValueError(f"must be <= {hi}")
        return v
    return conv


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _choice(*opts):
    def conv(s):
        s = s.strip()
        if s not in opts:
            raise ValueError(f"expected one of {', '.join(opts)}")
        return s
    return conv


def _shape(s):
    v = tuple(int(t) for t in s.replace("x", ",").split(",") if t.strip())
    if not v or min(v) < 1:
        raise ValueError("expected positive dimensions, e.g. 1,28,28")
    return v


def _layers(s):
    toks = [t.strip() for t in s.split(",") if t.strip()]
    if not toks:
        raise ValueError("empty layer list")
    return toks


def _opt_int(s):
    s = s.strip()
    return None if s in ("", "none") else _int(1)(s)


def _text(s):
    return s.strip()


# section -> key -> (converter, default)
SCHEMA = {
    "model": {
        "input_shape": (_shape, (2,)),
        "layers": (_layers, ["dense:32", "dense:32", "dense:2"]),
        "binarize_activations": (_bool, True),
        "real_first_last": (_bool, True),
        "input_map": (_choice("identity", "bipolar"), "identity"),
    },
    "method": {
        "name": (_choice(*METHODS), "scaledrop"),
        "p": (_float(0.0, 1.0), 0.2),
        "adaptive": (_bool, False),
        "p_min": (_float(0.0, 1.0), 0.05),
        "p_max": (_float(0.0, 1.0), 0.25),
        "prior_mu": (_float(), 1.0),
        "prior_sigma": (_float(0.0, open_lo=True), 0.1),
        "posterior_sigma0": (_float(0.0, open_lo=True), 0.05),
        "bank_size": (_int(1), 8),
        "bank_levels": (_int(1, 65535), 15),
        "mc_passes": (_int(1), 10),
        "ood_quantile": (_float(0.0, 1.0, open_lo=True), 0.95),
    },
    "device": {
        "i_c": (_float(0.0, open_lo=True), 1.0),
        "tau0": (_float(0.0, open_lo=True), 1.0),
        "delta": (_float(0.0, open_lo=True), 40.0),
        "pulse_width": (_float(0.0, open_lo=True), 1.0),
        "sigma_p": (_float(0.0), 0.0),
        "g_on": (_float(0.0, open_lo=True), 2.0),
        "g_off": (_float(0.0, open_lo=True), 1.0),
        "sigma_g_rel": (_float(0.0), 0.0),
        "fault_rate": (_float(0.0, 1.0), 0.0),
        "fault_kind": (_choice("stuck_off", "stuck_on", "mixed"), "stuck_off"),
    },
    "crossbar": {
        "strategy": (_choice(*STRATEGIES), "unfold_column"),
        "max_rows": (_opt_int, None),
        "max_cols": (_opt_int, None),
        "adc_bits": (_int(0, 24), 0),
    },
    "train": {
        "epochs": (_int(1), 100),
        "batch": (_int(1), 32),
        "lr": (_float(0.0, open_lo=True), 0.01),
        "lr_decay": (_float(0.0, 1.0, open_lo=True), 1.0),
        "lambda": (_float(0.0), 1e-3),
        "lambda_kl": (_float(0.0), 1.0),
        "kl_warmup": (_float(0.0, 1.0), 0.3),
        "latent_clip": (_float(0.0, open_lo=True), 1.0),
        "dataset": (_choice("two_moons", "blobs", "idx"), "two_moons"),
        "n_train": (_int(2), 600),
        "n_test": (_int(2), 600),
        "noise": (_float(0.0), 0.1),
        "data_seed": (_int(0), 0),
        "train_images": (_text, ""),
        "train_labels": (_text, ""),
        "test_images": (_text, ""),
        "test_labels": (_text, ""),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    seed: int = 0

    def __getitem__(self, section):
        return self.values[section]

    # -- runtime objects ---------------------------------------------------------
    def model_spec(self):
        m = self.values["model"]
        return build_model_spec(m["input_shape"], m["layers"], self.values["method"]["name"],
                                m["binarize_activations"], m["real_first_last"])

    def method_params(self):
        m = self.values["method"]
        return MethodParams(p=m["p"], adaptive=m["adaptive"], p_min=m["p_min"], p_max=m["p_max"],
                            prior=PriorSpec(m["prior_mu"], m["prior_sigma"]),
                            posterior_sigma0=m["posterior_sigma0"], bank_size=m["bank_size"],
                            bank_levels=m["bank_levels"])

    def device_setup(self):
        d, c = self.values["device"], self.values["crossbar"]
        return DeviceSetup(G_on=d["g_on"], G_off=d["g_off"], sigma_g_rel=d["sigma_g_rel"], adc_bits=c["adc_bits"],
                           fault_rate=d["fault_rate"], fault_kind=d["fault_kind"], strategy=c["strategy"],
                           max_rows=c["max_rows"], max_cols=c["max_cols"], sigma_p=d["sigma_p"])

    def mtj_params(self):
        d = self.values["device"]
        return MtjParams(d["i_c"], d["tau0"], d["delta"])

    def train_params(self):
        t = self.values["train"]
        return TrainParams(epochs=t["epochs"], batch=t["batch"], lr=t["lr"], lam=t["lambda"],
                           lam_kl=t["lambda_kl"], kl_warmup=t["kl_warmup"], latent_clip=t["latent_clip"],
                           lr_decay=t["lr_decay"])

    # -- text form ---------------------------------------------------------------
    def to_ini(self):
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_render(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def _render(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(t) for t in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text, seed=None):
    """Validate INI text against the schema; missing keys take defaults."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: invalid value {raw!r} ({exc})") from None
    cfg = RunConfig(values, 0 if seed is None else int(seed))
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    m = cfg.values["method"]
    if m["p_min"] > m["p_max"]:
        raise ConfigError(f"method.p_min ({m['p_min']}) exceeds method.p_max ({m['p_max']})")
    d = cfg.values["device"]
    if d["g_on"] <= d["g_off"]:
        raise ConfigError("device.g_on must exceed device.g_off")
    t = cfg.values["train"]
    if t["dataset"] == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not t[key]:
                raise ConfigError(f"train.{key} is required when train.dataset = idx")
    try:
        cfg.model_spec()
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"model.layers: {exc}") from None


def load_config(path, seed=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, seed)


def default_config(seed=0):
    return parse_config("", seed)
