"""Run orchestration shared by the CLI and the test suite."""

import numpy as np

from . import checkpoint
from .data import gen_synthetic, load_idx
from .errors import DimensionError, DivergenceError
from .model import BayesNet
from .resources import count_events
from .rng import DOMAIN_DATA, DOMAIN_EVAL, SeedTree
from .train import fit
from .uncertainty import predict_bayes


def prepare_inputs(config, x):
    """Reshape raw samples to the model input and apply the configured input map."""
    shape = config["model"]["input_shape"]
    x = np.asarray(x, dtype=np.float64)
    if int(np.prod(x.shape[1:])) != int(np.prod(shape)):
        raise DimensionError(f"samples of shape {x.shape[1:]} do not fit model input {shape}")
    x = x.reshape((len(x),) + tuple(shape))
    if config["model"]["input_map"] == "bipolar":
        x = 2.0 * x - 1.0
    return x


def load_dataset(config):
    """(x_train, y_train, x_test, y_test) as configured, inputs already prepared."""
    t = config["train"]
    if t["dataset"] == "idx":
        x, y = load_idx(t["train_images"]), load_idx(t["train_labels"])
        xt, yt = load_idx(t["test_images"]), load_idx(t["test_labels"])
        for imgs, labels, which in ((x, y, "train"), (xt, yt, "test")):
            if len(imgs) != len(labels):
                raise DimensionError(f"{which} set has {len(imgs)} images but {len(labels)} labels")
    else:
        seed = t["data_seed"]
        x, y = gen_synthetic(t["dataset"], t["n_train"], t["noise"], seed=SeedTree(seed, (DOMAIN_DATA, 0)))
        xt, yt = gen_synthetic(t["dataset"], t["n_test"], t["noise"], seed=SeedTree(seed, (DOMAIN_DATA, 1)))
    return prepare_inputs(config, x), y, prepare_inputs(config, xt), yt


def build_net(config):
    return BayesNet(config.model_spec(), config.method_params(), seed=config.seed)


def run_training(config, data=None, on_epoch=None):
    """Train per config; returns (net, history). Divergence propagates after rollback."""
    x, y, _, _ = data if data is not None else load_dataset(config)
    net = build_net(config)
    try:
        history = fit(net, x, y, config.train_params(), seed=config.seed, on_epoch=on_epoch)
    except DivergenceError as exc:
        exc.net = net
        raise
    if config["method"]["name"] == "spinbayes":
        net.build_banks(config.seed)
    return net, history


def run_eval(net, config, x, y=None, T=None, mode="ideal", seed=None, chip_seed=None):
    """MC evaluation in ideal (math) or device mode.

    Returns the UncertaintyReport and the closed-form per-image event counts.
    """
    T = T or config["method"]["mc_passes"]
    seed = config.seed if seed is None else seed
    backend = "math"
    if mode == "device":
        net.program_device(config.device_setup(), seed if chip_seed is None else chip_seed)
        backend = "device"
    elif mode != "ideal":
        raise ValueError(f"mode must be 'ideal' or 'device', got {mode!r}")
    report = predict_bayes(net, x, T, SeedTree(seed, (DOMAIN_EVAL,)), labels=y, backend=backend)
    counts = count_events(net.spec, T=T, setup=config.device_setup())
    return report, counts


def save_checkpoint(path, net, config):
    checkpoint.save(path, net, config, config.seed)
