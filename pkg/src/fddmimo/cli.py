"""Command line entry point: ``fddmimo <command> [options]``.

Commands
--------
gen-data    synthesize the indoor scenario dataset (JSONL + sidecar metadata)
train-gan   train the Reg-GAN prior, write a JSON checkpoint and history CSV
estimate    run the estimators on one random test user and print metrics
sweep       Monte-Carlo sweep over one axis, write the results CSV
diagnose    realism/diversity summary of a trained generator
config      print every configurable field with its default value

All commands accept ``--config FILE`` (flat ``section.field = value``);
command-line options override the file.
"""
import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import dataset as ds
from . import experiments as ex
from . import reggan
from .config import ConfigError, dump_config, load_config


def _values(text):
    return tuple(float(v) if "." in v or "e" in v.lower() else int(v)
                 for v in text.replace(",", " ").split())


def _scenarios(text):
    return tuple(s for s in text.replace(",", " ").split() if s)


def cmd_gen_data(args, cfgs):
    spec = cfgs["scenario"]
    if args.users is not None:
        spec = replace(spec, user_count=args.users)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    data = ds.generate(spec)
    ds.save(data, args.out)
    print(f"wrote {len(data)} users ({len(data.train)} train / {len(data.test)} test) to {args.out}")


def cmd_train_gan(args, cfgs):
    gcfg = cfgs["gan"]
    if args.epochs is not None:
        gcfg = replace(gcfg, epochs=args.epochs)
    if args.seed is not None:
        gcfg = replace(gcfg, seed=args.seed)
    data = ds.load(args.data)
    model = reggan.train(data, gcfg)
    reggan.save_checkpoint(model, args.out)
    if args.history:
        reggan.write_history_csv(model, args.history)
    last = model.history[-1] if model.history else {}
    print(json.dumps({"checkpoint": args.out, **last}))


def _sweep_spec(args, cfgs, **overrides):
    spec = cfgs["sweep"]
    changes = {k: v for k, v in overrides.items() if v is not None}
    if changes.get("axis") and "values" not in changes:
        changes["values"] = ex.DEFAULT_GRIDS[changes["axis"]]
    return replace(spec, **changes)


def _model_for(spec, path):
    if any(s in ex.GAN_SCENARIOS for s in spec.scenarios):
        if not path:
            raise SystemExit("error: the selected scenarios need --model")
        return reggan.load_checkpoint(path)
    return reggan.load_checkpoint(path) if path else None


def _run(spec, args, cfgs):
    data = ds.load(args.data)
    model = _model_for(spec, args.model)
    cfg = cfgs["system"]
    if cfg.L != data.L:
        cfg = cfg.with_(L=data.L)
    return ex.run_sweep(spec, model, data, cfg, cfgs["descent"], cfgs["dl_descent"], cfgs["r2f2"])


def cmd_estimate(args, cfgs):
    spec = _sweep_spec(args, cfgs, axis="snr_db", values=(args.snr_db,),
                       scenarios=_scenarios(args.scenarios) if args.scenarios else None,
                       trials=1, seed=args.seed, output=None, timing=True)
    rows = _run(spec, args, cfgs)
    print(json.dumps([{"scenario": r.scenario, "snr_db": r.value, "nmse_db": r.nmse_db,
                       "rate": r.rate, "ser": r.ser, "iters": r.iters, "seconds": r.seconds}
                      for r in rows], indent=2))


def cmd_sweep(args, cfgs):
    spec = _sweep_spec(args, cfgs, axis=args.axis,
                       values=_values(args.values) if args.values else None,
                       scenarios=_scenarios(args.scenarios) if args.scenarios else None,
                       trials=args.trials, seed=args.seed, output=args.out,
                       timing=True if args.timing else None)
    rows = _run(spec, args, cfgs)
    if not spec.output:
        sys.stdout.write(ex.format_csv(rows))
    else:
        print(f"wrote {len(rows)} rows to {spec.output}")


def cmd_diagnose(args, cfgs):
    model = reggan.load_checkpoint(args.model)
    data = ds.load(args.data)
    rng = np.random.default_rng(args.seed)
    d = reggan.diagnostics(model, data, n_samples=args.samples, rng=rng)
    print(json.dumps({"d_accuracy": d["d_accuracy"],
                      "mean_pairwise_distance": d["mean_pairwise_distance"],
                      "n_samples": d["n_samples"],
                      "histogram_edges": d["histogram_edges"].tolist(),
                      "histograms": d["histograms"].tolist()}))


def cmd_config(args, cfgs):
    sys.stdout.write(dump_config(None if args.config is None else cfgs))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fddmimo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat key = value config file")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "synthesize the scenario dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--users", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("train-gan", cmd_train_gan, "train the Reg-GAN prior")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--history")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("estimate", cmd_estimate, "estimate the channel of one random test user")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model")
    sp.add_argument("--snr-db", type=float, default=10.0)
    sp.add_argument("--scenarios", help="comma-separated, default from config")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("sweep", cmd_sweep, "Monte-Carlo sweep, results as CSV")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model")
    sp.add_argument("--axis", choices=ex.AXES)
    sp.add_argument("--values", help="comma-separated axis values")
    sp.add_argument("--scenarios", help=f"comma-separated subset of {', '.join(ex.SCENARIOS)}")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="CSV path (default: stdout)")
    sp.add_argument("--timing", action="store_true", help="record wall time (breaks byte-identical reruns)")

    sp = add("diagnose", cmd_diagnose, "GAN realism and diversity summary")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)

    add("config", cmd_config, "print all config fields")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfgs = load_config(args.config)
        args.func(args, cfgs)
    except (ConfigError, ds.DatasetFormatError, ValueError, OSError) as exc:
        print(f"fddmimo: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
