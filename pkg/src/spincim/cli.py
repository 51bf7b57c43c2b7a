"""Command-line entry point.

    spincim [--config FILE] [--seed N] [--out DIR] VERB [options]

Verbs: train, eval, ood, map, energy, device-cal, gen-data. Every report is a
file of line-delimited JSON records under --out. Exit codes: 0 ok, 2 config
error, 3 data error, 4 numeric divergence.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import app, checkpoint
from .config import default_config, load_config
from .data import gen_synthetic, save_idx
from .device import (DropoutModuleState, binomial_band, calibrate_current, generate_bitstream,
                     lag1_autocorrelation, sample_module_probability, switching_probability)
from .errors import ConfigError, DimensionError, DivergenceError, ParseError
from .model import METHODS, layer_plan, with_method
from .resources import (PUBLISHED_ENERGY_UJ, SHIPPED_COSTS, count_dropout_modules, count_events,
                        efficiency_ratio, energy_estimate, reference_counts)
from .rng import DOMAIN_DATA, DOMAIN_DEVICE, DOMAIN_EVAL, SeedTree
from .uncertainty import corrupt, ood_rate, predict_bayes

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

log = logging.getLogger("spincim")


def write_records(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _config(args):
    return load_config(args.config, args.seed) if args.config else default_config(args.seed)


def _checkpoint_path(args):
    return args.checkpoint or os.path.join(args.out, "model.nspn")


def _load_model(args):
    try:
        return checkpoint.load(_checkpoint_path(args))
    except FileNotFoundError as exc:
        raise ParseError(f"cannot read checkpoint: {exc.strerror}") from None


def cmd_train(args):
    cfg = _config(args)
    data = app.load_dataset(cfg)
    epochs = []
    try:
        net, _ = app.run_training(cfg, data, on_epoch=epochs.append)
    except DivergenceError as exc:
        # parameters were rolled back to the last finite epoch; keep them
        app.save_checkpoint(_checkpoint_path(args), exc.net, cfg)
        raise
    finally:
        write_records(os.path.join(args.out, "train.jsonl"), epochs)
    app.save_checkpoint(_checkpoint_path(args), net, cfg)
    report, _ = app.run_eval(net, cfg, data[2], data[3])
    summary = {"record": "summary", "accuracy": report.accuracy, "nll": report.nll,
               "mc_passes": cfg["method"]["mc_passes"], "method": cfg["method"]["name"]}
    write_records(os.path.join(args.out, "train_summary.jsonl"), [summary])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    net, cfg, _ = _load_model(args)
    _, _, x, y = app.load_dataset(cfg)
    report, counts = app.run_eval(net, cfg, x, y, T=args.T, mode=args.mode)
    records = report.records(y)
    summary = {"record": "summary", "mode": args.mode, "accuracy": report.accuracy, "nll": report.nll,
               "mean_entropy": float(report.entropy.mean()), "T": report.per_pass_probs.shape[0],
               "events_per_image": counts.as_dict()}
    write_records(os.path.join(args.out, "eval.jsonl"), records + [summary])
    print(json.dumps({k: v for k, v in summary.items() if k != "events_per_image"}, sort_keys=True))
    return EXIT_OK


def far_uniform_noise(n, lo, hi, margin, rng):
    """Uniform samples from a box grown by ``margin`` around [lo, hi], outside the data box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    span = hi - lo
    out = []
    while sum(len(o) for o in out) < n:
        z = rng.uniform(lo - margin * span, hi + margin * span, size=(4 * n, len(lo)))
        far = np.any((z < lo - 0.5 * span) | (z > hi + 0.5 * span), axis=1)
        out.append(z[far])
    return np.concatenate(out)[:n]


def cmd_ood(args):
    net, cfg, _ = _load_model(args)
    _, _, x, y = app.load_dataset(cfg)
    T = args.T or cfg["method"]["mc_passes"]
    tree = SeedTree(cfg.seed, (DOMAIN_EVAL,))
    rng = tree.child(1).generator()
    flat = x.reshape(len(x), -1)
    if args.kind == "far_uniform":
        ood = far_uniform_noise(len(x), flat.min(axis=0), flat.max(axis=0), args.severity or 4.0, rng)
        ood = ood.reshape(x.shape)
    else:
        ood = corrupt(x, args.kind, args.severity, rng)
    rep_id = predict_bayes(net, x, T, tree.child(2), labels=y)
    rep_ood = predict_bayes(net, ood, T, tree.child(3))
    res = ood_rate(rep_id.entropy, rep_ood.entropy, cfg["method"]["ood_quantile"])
    summary = {"record": "summary", "kind": args.kind, "threshold": res.threshold,
               "detection_rate": res.detection_rate, "score": res.score_kind,
               "id_mean_entropy": float(rep_id.entropy.mean()), "ood_mean_entropy": float(rep_ood.entropy.mean())}
    recs = [{"id": i, "set": "ood", "entropy": float(h)} for i, h in enumerate(rep_ood.entropy)]
    write_records(os.path.join(args.out, "ood.jsonl"), recs + [summary])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_map(args):
    cfg = _config(args)
    spec = cfg.model_spec()
    setup = cfg.device_setup()
    records = []
    for i in spec.weighted_indices():
        if not spec.layers[i].binary_weights:
            records.append({"layer": i, "record": "digital", "reason": "real-valued weights"})
            continue
        plan = layer_plan(spec, i, setup)
        records.extend(plan.records(setup.max_rows, setup.max_cols, layer=i))
    write_records(os.path.join(args.out, "map.jsonl"), records)
    print(json.dumps({"crossbars": sum(1 for r in records if "crossbar" in r),
                      "dropout_modules": count_dropout_modules(spec)}))
    return EXIT_OK


def cmd_energy(args):
    records = []
    energies = {}
    if args.reference:
        for m in PUBLISHED_ENERGY_UJ:
            est = energy_estimate(reference_counts(m), SHIPPED_COSTS)
            energies[m] = est.total_uj
            records.append({"record": "energy", "method": m, "config": "reference", "total_uj": est.total_uj,
                            "breakdown_uj": est.breakdown_uj, "published_uj": PUBLISHED_ENERGY_UJ[m]})
    else:
        cfg = _config(args)
        spec = cfg.model_spec()
        T = args.T or cfg["method"]["mc_passes"]
        for m in METHODS:
            counts = count_events(with_method(spec, m), T=T, setup=cfg.device_setup())
            est = energy_estimate(counts, SHIPPED_COSTS)
            energies[m] = est.total_uj
            records.append({"record": "energy", "method": m, "T": T, "total_uj": est.total_uj,
                            "breakdown_uj": est.breakdown_uj, "events": counts.as_dict()})
    for a, ea in energies.items():
        for b, eb in energies.items():
            if eb > 0:
                records.append({"record": "ratio", "a": a, "b": b, "ratio": efficiency_ratio(ea, eb)})
    write_records(os.path.join(args.out, "energy.jsonl"), records)
    for r in records:
        if r["record"] == "energy":
            print(f"{r['method']:10s} {r['total_uj']:.4f} uJ/image (calibrated, not physical)")
    return EXIT_OK


def cmd_device_cal(args):
    cfg = _config(args)
    params = cfg.mtj_params()
    t = cfg["device"]["pulse_width"]
    sigma = cfg["device"]["sigma_p"]
    tree = SeedTree(cfg.seed, (DOMAIN_DEVICE, 7))
    records = []
    for k, p in enumerate(args.p):
        current = calibrate_current(p, t, params)
        g = tree.child(k).generator()
        realized = sample_module_probability(p, sigma, g)
        mod = DropoutModuleState(p, realized, sigma)
        bits = generate_bitstream(mod, args.n, g)
        lo, hi = binomial_band(args.n, mod.realized_p)
        records.append({"target_p": p, "current": current, "roundtrip_p": switching_probability(current, t, params),
                        "realized_p": mod.realized_p, "bits": args.n, "ones_fraction": float(bits.mean()),
                        "band_3sigma": [lo, hi], "lag1_autocorrelation": lag1_autocorrelation(bits)})
    write_records(os.path.join(args.out, "device_cal.jsonl"), records)
    for r in records:
        print(f"p={r['target_p']:.3f} I={r['current']:.6f} ones={r['ones_fraction']:.4f} "
              f"r1={r['lag1_autocorrelation']:+.4f}")
    return EXIT_OK


def cmd_gen_data(args):
    cfg = _config(args)
    for split, n, key in (("train", args.n, 0), ("test", args.n_test or args.n, 1)):
        x, y = gen_synthetic(args.kind, n, args.noise, seed=SeedTree(cfg.seed, (DOMAIN_DATA, key)))
        save_idx(os.path.join(args.out, f"{args.kind}-{split}-x.idx"), x)
        save_idx(os.path.join(args.out, f"{args.kind}-{split}-y.idx"), y)
    print(f"wrote {args.kind} train/test IDX files to {args.out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI run configuration")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (default 0)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="spincim", parents=[common],
                                 description="Bayesian binary networks on simulated spintronic crossbars.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (default OUT/model.nspn)")
    for name, helptext in (("eval", "MC evaluation of a checkpoint"), ("ood", "OOD detection on a checkpoint")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--checkpoint", help="checkpoint path (default OUT/model.nspn)")
        p.add_argument("-T", type=int, default=None, help="MC passes (default from config)")
        if name == "eval":
            p.add_argument("--mode", choices=("ideal", "device"), default="ideal")
        else:
            p.add_argument("--kind", choices=("far_uniform", "gaussian_noise", "uniform_noise", "rotation"),
                           default="far_uniform")
            p.add_argument("--severity", type=float, default=None)
    sub.add_parser("map", parents=[common], help="crossbar mapping report")
    p = sub.add_parser("energy", parents=[common], help="event counts and energy per method")
    p.add_argument("-T", type=int, default=None)
    p.add_argument("--reference", action="store_true", help="use the calibration reference configurations")
    p = sub.add_parser("device-cal", parents=[common], help="MTJ current calibration and bitstream statistics")
    p.add_argument("--p", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    p.add_argument("--n", type=int, default=100_000)
    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset as IDX files")
    p.add_argument("--kind", choices=("two_moons", "blobs"), default="two_moons")
    p.add_argument("--n", type=int, default=600)
    p.add_argument("--n-test", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.1)
    return ap


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ood": cmd_ood, "map": cmd_map, "energy": cmd_energy,
            "device-cal": cmd_device_cal, "gen-data": cmd_gen_data}


def main(argv=None):
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("seed", 0), ("out", "."), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, DimensionError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
