"""Command-line interface: ``delgrad <command> [options]``.

Commands
--------
gen-data     write the train/validation/test splits to one CSV file
train        train one network; writes model, metrics and checkpoint
gradcheck    finite-difference check of the analytic gradients
sweep        grid / span / frozen-delay / learning-rate sweeps
hw-ablation  hardware-noise ladder table

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure
(non-finite training state, or a gradient check above tolerance).
"""

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import experiment
from .data import EncodingConfig, encode, splits_to_csv
from .gradcheck import run_gradcheck
from .train import NumericalAbort, checkpoint, load_checkpoint

log = logging.getLogger("delgrad")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _load_config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.dataset.seed = args.seed
    return cfg


def _out_dir(args, cfg):
    d = Path(args.out or cfg.output.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _tag(cfg):
    return f"config_hash={cfg.hash()}"


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args, cfg):
    splits = experiment.load_splits(cfg)
    path = Path(args.output) if args.output else _out_dir(args, cfg) / "yinyang.csv"
    enc = EncodingConfig(cfg.encoding.t_early, cfg.encoding.t_late)
    splits_to_csv(splits, path, enc, header=f"yinyang dataset_seed={cfg.dataset.seed} {_tag(cfg)}")
    print(f"wrote {sum(len(s) for s in splits.values())} rows to {path}")
    return EXIT_OK


def cmd_train(args, cfg):
    out = _out_dir(args, cfg)
    spec = experiment.RunSpec(cfg.profile, cfg.network.hidden[0], cfg.network.delay_kind[0],
                              cfg.seed)
    clf, enc, cfg = experiment.build_classifier(cfg, spec)
    clf.set_params(hidden=tuple(cfg.network.hidden), delay_kind=tuple(cfg.network.delay_kind))
    splits = experiment.load_splits(cfg)
    X = {k: encode(v.xy, enc) for k, v in splits.items()}
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt_path = out / "checkpoint.json"

    def save_ckpt(result):
        if args.checkpoint_every and result.epochs_done % args.checkpoint_every == 0:
            _dump_json(ckpt_path, {**checkpoint(result, clf.train_config_),
                                   "config_hash": cfg.hash()})

    try:
        clf.fit(X["train"], splits["train"].labels,
                eval_set=(X["validation"], splits["validation"].labels),
                epoch_callback=save_ckpt, resume=resume)
    except NumericalAbort as exc:
        dump = out / "abort_dump.json"
        _dump_json(dump, {"error": str(exc), "state": exc.state, "config_hash": cfg.hash()})
        print(f"numerical abort: {exc}; state written to {dump}", file=sys.stderr)
        return EXIT_NUMERIC
    test_err = clf.error_rate(X["test"], splits["test"].labels)
    _dump_json(out / "model.json", {"config_hash": cfg.hash(), "config": cfg.to_dict(),
                                    "network": clf.network_.to_dict()})
    _dump_json(ckpt_path, {**checkpoint(clf.result_, clf.train_config_),
                           "config_hash": cfg.hash()})
    clf.log_.save(out / "metrics.tsv", header=_tag(cfg))
    summary = {"config_hash": cfg.hash(), "test_err": test_err, "n_params": clf.n_params_,
               "final": clf.log_.rows[-1] if clf.log_.rows else None}
    _dump_json(out / "summary.json", summary)
    print(f"test error {test_err:.4f} ({clf.n_params_} parameters); outputs in {out}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    report = run_gradcheck(args.instances, seed=cfg.seed, tol=args.tol, corrupt=args.inject_sign_flip)
    print(f"# gradcheck {_tag(cfg)} tol={args.tol:g}")
    for line in report.lines():
        print(line)
    print(f"worst {report.worst:.3e}: {'PASS' if report.ok else 'FAIL'}")
    return EXIT_OK if report.ok else EXIT_NUMERIC


def _specs_for_sweep(cfg):
    sw, tr = cfg.sweep, cfg.training
    seeds = [cfg.seed + i for i in range(sw.seeds)]
    ep = tr.epochs
    hidden = cfg.network.hidden[0]
    if sw.mode == "grid":
        return experiment.grid_specs(sw.hidden, sw.kinds, seeds, cfg.profile, epochs=ep), \
            ("hidden", "kind")
    if sw.mode == "span":
        return experiment.span_specs(sw.spans, sw.kinds, seeds, hidden, epochs=ep), \
            ("span", "kind")
    if sw.mode == "frozen":
        return experiment.frozen_specs(sw.frozen_delay_std, sw.kinds, seeds, hidden, epochs=ep), \
            ("frozen_std", "kind")
    return [experiment.RunSpec(cfg.profile, hidden, k, s, lr=lr, epochs=ep)
            for lr in sw.lrs for k in sw.kinds for s in seeds], ("lr", "kind")


def _run_specs(specs, cfg, args):
    results = Path(args.results_dir or Path(cfg.output.dir) / "cache")
    threads = 1 if args.reference_mode else max(1, args.threads)
    if threads == 1:
        rows = experiment.run_many(specs, cfg, results)
    else:
        with ProcessPoolExecutor(threads) as pool:
            parts = pool.map(_run_one, [(s, cfg, results) for s in specs])
            rows = [r for part in parts for r in part]
    return relabel(rows, specs)


def relabel(rows, specs):
    """Attach the requested spec to each row.

    A cached run is shared by every spec that resolves to the same
    parameters (the default span and the plain run, say), but its stored
    record names the spec that first produced it.
    """
    out = []
    for r, spec in zip(rows, specs):
        r = dict(r)
        r["spec"], r["label"] = dataclasses.asdict(spec), spec.label()
        out.append(r)
    return out


def _run_one(job):
    spec, cfg, results = job
    return experiment.run_many([spec], cfg, results)


def cmd_sweep(args, cfg):
    specs, by = _specs_for_sweep(cfg)
    rows = _run_specs(specs, cfg, args)
    table = sorted(experiment.summarize(rows, by), key=lambda r: tuple(str(r[b]) for b in by))
    out = _out_dir(args, cfg)
    path = out / f"sweep_{cfg.sweep.mode}.tsv"
    cols = list(by) + ["median", "q25", "q75", "iqr", "n", "complete", "n_params"]
    experiment.write_table(path, table, cols, header=f"sweep mode={cfg.sweep.mode} {_tag(cfg)}")
    _dump_json(path.with_suffix(".json"), {"config_hash": cfg.hash(), "config": cfg.to_dict(),
                                           "cells": table, "runs": [_brief(r) for r in rows]})
    for line in path.read_text().splitlines():
        print(line)
    return EXIT_OK if all(r["complete"] for r in table) else EXIT_NUMERIC


def cmd_hw_ablation(args, cfg):
    sw = cfg.sweep
    seeds = [cfg.seed + i for i in range(sw.seeds)]
    specs = experiment.ladder_specs(sw.ladder, sw.ladder_kinds, seeds, cfg.network.hidden[0],
                                    epochs=cfg.training.epochs)
    rows = _run_specs(specs, cfg, args)
    cells = {(c["rung"], c["kind"]): c for c in experiment.summarize(rows, ("rung", "kind"))}
    out = _out_dir(args, cfg)
    path = out / "hw_ablation.tsv"
    with open(path, "w") as fh:
        fh.write(f"# hardware ablation, median test error [q25, q75] over {len(seeds)} seeds "
                 f"{_tag(cfg)}\n")
        fh.write("\t".join(["kind"] + list(sw.ladder)) + "\n")
        for kind in sw.ladder_kinds:
            vals = [cells[(r, kind)] for r in sw.ladder]
            fh.write("\t".join([kind] + [f"{c['median']:.4f} [{c['q25']:.4f}, {c['q75']:.4f}]"
                                         for c in vals]) + "\n")
    _dump_json(path.with_suffix(".json"), {"config_hash": cfg.hash(), "config": cfg.to_dict(),
                                           "cells": list(cells.values()),
                                           "runs": [_brief(r) for r in rows]})
    print(path.read_text(), end="")
    return EXIT_OK if all(c["complete"] for c in cells.values()) else EXIT_NUMERIC


# -- helpers ------------------------------------------------------------------


def _brief(r):
    return {k: r.get(k) for k in ("label", "spec", "test_err", "val_err", "train_err",
                                  "n_params", "seconds", "error")}


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if dataclasses.is_dataclass(x):
        return dataclasses.asdict(x)
    return str(x)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "gradcheck": cmd_gradcheck,
            "sweep": cmd_sweep, "hw-ablation": cmd_hw_ablation}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="override the run and dataset seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--reference-mode", action="store_true",
                        help="single process, fully deterministic execution")
    common.add_argument("--out", help="output directory (default: output.dir of the config)")
    common.add_argument("--results-dir", help="cache of finished runs (sweeps)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="delgrad", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="write the dataset file")
    g.add_argument("-o", "--output", help="file path (default: <out>/yinyang.csv)")
    t = sub.add_parser("train", parents=[common], help="train one network")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--checkpoint-every", type=int, default=10, metavar="N",
                   help="write checkpoint.json every N epochs (0: only at the end)")
    c = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    c.add_argument("--instances", type=int, default=100)
    c.add_argument("--tol", type=float, default=1e-5)
    c.add_argument("--inject-sign-flip", action="store_true",
                   help="negative control: flip the analytic gradient sign")
    sub.add_parser("sweep", parents=[common], help="run the sweep of the config")
    sub.add_parser("hw-ablation", parents=[common], help="hardware-noise ladder")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _load_config(args)
    except (config_mod.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (config_mod.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
