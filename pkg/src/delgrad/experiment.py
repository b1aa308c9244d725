"""Experiment runners: single runs, sweeps and the hardware-noise ladder.

Every finished run is stored as a small JSON document keyed by a digest of
its resolved parameters and of the numerical source files, so repeated
sweeps (and the acceptance tests) reuse results that are still valid and
recompute those that are not.
"""

import dataclasses
import functools
import hashlib
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from .data import EncodingConfig, encode, make_splits, rescale_span
from .estimator import DelGradClassifier, noise_model_from_block
from .hwmodel import LADDER, NoiseModel

log = logging.getLogger(__name__)

_NUMERIC_SOURCES = ("special.py", "lif.py", "_fastpath.py", "graph.py", "losses.py",
                    "train.py", "hwmodel.py", "data.py", "estimator.py", "experiment.py")


@functools.lru_cache(maxsize=None)
def code_digest():
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in _NUMERIC_SOURCES:
        h.update((here / name).read_bytes())
    return h.hexdigest()[:12]


@functools.lru_cache(maxsize=4)
def _splits(seed, n_train, n_val, n_test):
    return make_splits(seed, {"train": n_train, "validation": n_val, "test": n_test})


def load_splits(cfg):
    d = cfg.dataset
    return _splits(d.seed, d.train, d.validation, d.test)


@dataclasses.dataclass
class RunSpec:
    """Everything that distinguishes one training run from another."""

    profile: str = "ideal"
    hidden: int = 30
    kind: str = "axonal"
    seed: int = 0
    span: float = None
    lr: float = None
    rung: str = None
    frozen_std: float = None
    epochs: int = None

    def label(self):
        parts = [self.profile, f"h{self.hidden}", self.kind, f"s{self.seed}"]
        for name in ("span", "lr", "rung", "frozen_std", "epochs"):
            v = getattr(self, name)
            if v is not None:
                parts.append(f"{name}={v}")
        return "/".join(parts)


def build_classifier(base_cfg, spec):
    """Classifier and encoding for ``spec`` on top of ``base_cfg``'s non-profile blocks."""
    profile = spec.profile
    noise = None
    if spec.rung is not None:
        profile = "ideal" if spec.rung == "ideal" else "hardware"
    if profile == base_cfg.profile:
        cfg = base_cfg
    else:
        cfg = config_mod.from_profile(profile, dataset=dataclasses.asdict(base_cfg.dataset),
                                      encoding=dataclasses.asdict(base_cfg.encoding))
    if spec.rung is not None and profile == "hardware":
        nz = base_cfg.noise if base_cfg.profile == "hardware" else cfg.noise
        fields = {f: getattr(nz, f) for f in ("quant_max", "quant_step", "fp_mean", "fp_std",
                                              "t2t_std", "delay_jitter_std", "offset_units")}
        noise = NoiseModel.rung(spec.rung, **fields)
        noise.multiplex = nz.multiplex
        if spec.hidden == 5:
            noise.weight_range_factor = nz.hidden5_range_factor
    else:
        noise = noise_model_from_block(cfg.noise, (spec.hidden,))
    enc = EncodingConfig(cfg.encoding.t_early, cfg.encoding.t_late)
    if spec.span is not None:
        enc = rescale_span(enc, spec.span)
    overrides = dict(hidden=(spec.hidden,), delay_kind=(spec.kind,), random_state=spec.seed,
                     t_late=enc.t_late, noise=noise)
    if spec.lr is not None:
        overrides.update(lr_weights=spec.lr, lr_delays=spec.lr)
    if spec.epochs is not None:
        overrides["epochs"] = spec.epochs
    if spec.frozen_std is not None:
        overrides.update(train_delays=False, delay_init_std=spec.frozen_std)
    clf = DelGradClassifier.from_config(cfg, **overrides)
    return clf, enc, cfg


def _params_digest(clf, enc, cfg):
    params = clf.get_params()
    params["noise"] = None if params["noise"] is None else params["noise"].to_dict()
    doc = {"params": params, "encoding": dataclasses.asdict(enc),
           "dataset": dataclasses.asdict(cfg.dataset), "code": code_digest()}
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16], doc


def run(spec, base_cfg=None, results_dir=None, force=False):
    """Train one network (or load the cached result) and return a summary dict."""
    base_cfg = base_cfg or config_mod.ExperimentConfig()
    clf, enc, cfg = build_classifier(base_cfg, spec)
    key, doc = _params_digest(clf, enc, cfg)
    path = None
    if results_dir is not None:
        path = Path(results_dir) / "runs" / f"{key}.json"
        if path.exists() and not force:
            with open(path) as fh:
                return json.load(fh)
    splits = load_splits(cfg)
    X = {k: encode(v.xy, enc) for k, v in splits.items()}
    Y = {k: v.labels for k, v in splits.items()}
    t0 = time.perf_counter()
    clf.fit(X["train"], Y["train"], eval_set=(X["validation"], Y["validation"]))
    out = {
        "key": key,
        "spec": dataclasses.asdict(spec),
        "label": spec.label(),
        "test_err": clf.error_rate(X["test"], Y["test"]),
        "val_err": float(clf.log_.rows[-1]["val_err"]) if clf.log_.rows else float("nan"),
        "train_err": float(clf.log_.rows[-1]["train_err"]) if clf.log_.rows else float("nan"),
        "n_params": int(clf.n_params_),
        "seconds": time.perf_counter() - t0,
        "log": clf.log_.rows,
        "code": code_digest(),
        "resolved": doc,
    }
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w") as fh:
            json.dump(out, fh, default=str)
        os.replace(tmp, path)
    log.info("%s test_err=%.4f (%.0fs)", spec.label(), out["test_err"], out["seconds"])
    return out


def run_many(specs, base_cfg=None, results_dir=None, on_error="record"):
    rows = []
    for spec in specs:
        try:
            rows.append(run(spec, base_cfg, results_dir))
        except Exception as exc:  # a failed run marks its cell incomplete
            if on_error == "raise":
                raise
            log.warning("run %s failed: %s", spec.label(), exc)
            rows.append({"spec": dataclasses.asdict(spec), "label": spec.label(),
                         "test_err": float("nan"), "error": repr(exc)})
    return rows


def summarize(rows, by):
    """Median and inter-quartile range of test error per cell."""
    cells = {}
    for r in rows:
        k = tuple(r["spec"][b] for b in by)
        cells.setdefault(k, []).append(r)
    out = []
    for k, rs in cells.items():
        errs = np.array([r["test_err"] for r in rs], dtype=float)
        ok = errs[np.isfinite(errs)]
        q25, med, q75 = np.percentile(ok, [25, 50, 75]) if ok.size else (np.nan,) * 3
        out.append({**dict(zip(by, k)), "median": float(med), "q25": float(q25),
                    "q75": float(q75), "iqr": float(q75 - q25), "n": int(ok.size),
                    "complete": bool(ok.size == len(rs)),
                    "n_params": rs[0].get("n_params")})
    return out


# -- sweep definitions --------------------------------------------------------


def grid_specs(hidden, kinds, seeds, profile="ideal", lr=None, epochs=None):
    return [RunSpec(profile, h, k, s, lr=lr, epochs=epochs)
            for h in hidden for k in kinds for s in seeds]


def span_specs(spans, kinds, seeds, hidden=30, lr=None, epochs=None):
    return [RunSpec("ideal", hidden, k, s, span=sp, lr=lr, epochs=epochs)
            for sp in spans for k in kinds for s in seeds]


def frozen_specs(stds, kinds, seeds, hidden=30, lr=None, epochs=None):
    return [RunSpec("ideal", hidden, k, s, frozen_std=sd, lr=lr, epochs=epochs)
            for sd in stds for k in kinds for s in seeds]


def ladder_specs(rungs, kinds, seeds, hidden=30, ideal_lr=None, epochs=None):
    specs = []
    for rung in rungs:
        if rung not in LADDER:
            raise ValueError(f"unknown rung {rung!r}")
        for k in kinds:
            for s in seeds:
                lr = ideal_lr if rung == "ideal" else None
                specs.append(RunSpec("hardware" if rung != "ideal" else "ideal", hidden, k, s,
                                     lr=lr, rung=rung, epochs=epochs))
    return specs


def write_table(path, rows, columns, header=""):
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join(str(r.get(c, "")) for c in columns) + "\n")
