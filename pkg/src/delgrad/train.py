"""Mini-batch training of spike-time networks.

Adam with separate learning rates for weights and delay parameters, a step
learning-rate schedule applied per epoch, a cap on the size of each applied
weight update and a "weight bump" for layers that go too quiet.  Every
source of randomness is derived from ``(seed, epoch, batch)`` so a run can be
resumed from a checkpoint and continue bit-identically.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import DelayLayer, Network
from .losses import LossConfig, delta_mse, ttfs_decode

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "train_err", "val_err", "lr_w", "lr_d")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 150
    lr_weights: float = 5e-3
    lr_delays: float = 5e-3
    adam_beta: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    scheduler_step: int = 20
    scheduler_gamma: float = 0.95
    max_dw: float = 0.2
    bump_value: float = 5e-4
    max_silent_ratio: tuple = None
    seed: int = 0

    def __post_init__(self):
        self.adam_beta = tuple(self.adam_beta)
        if self.max_silent_ratio is not None:
            self.max_silent_ratio = tuple(float(r) for r in self.max_silent_ratio)
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_weights < 0 or self.lr_delays < 0:
            raise ValueError("learning rates must be non-negative")
        if not (0 <= self.adam_beta[0] < 1 and 0 <= self.adam_beta[1] < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0 or not self.max_dw > 0 or self.bump_value < 0:
            raise ValueError("adam_eps and max_dw must be positive, bump_value non-negative")
        if self.scheduler_step < 1 or not self.scheduler_gamma > 0:
            raise ValueError("invalid learning-rate schedule")

    def lr_at(self, epoch):
        """Learning rates for (0-based) ``epoch`` under the step schedule."""
        f = self.scheduler_gamma ** (epoch // self.scheduler_step)
        return self.lr_weights * f, self.lr_delays * f


class NumericalAbort(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)

    def to_dict(self):
        return {"m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v],
                "shapes": [list(a.shape) for a in self.m], "step": self.step}

    @classmethod
    def from_dict(cls, d):
        return cls([np.array(a, dtype=float).reshape(s) for a, s in zip(d["m"], d["shapes"])],
                   [np.array(a, dtype=float).reshape(s) for a, s in zip(d["v"], d["shapes"])],
                   int(d["step"]))


def adam_step(network, grads, state, cfg, lr_w, lr_d, quantizer_max=None):
    """Apply one Adam update in place; returns the applied weight deltas."""
    b1, b2 = cfg.adam_beta
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    applied = []
    for k, layer in enumerate(network.layers):
        g = grads[k]
        is_delay = isinstance(layer, DelayLayer)
        if g is None or g.size == 0 or not layer.trainable:
            applied.append(None)
            continue
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        step = -(lr_d if is_delay else lr_w) * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + cfg.adam_eps)
        if is_delay:
            layer.theta += step
        else:
            step = np.clip(step, -cfg.max_dw, cfg.max_dw)
            layer.weights += step
            if quantizer_max is not None:
                np.clip(layer.weights, -quantizer_max, quantizer_max, out=layer.weights)
        applied.append(step)
    return applied


def silent_policy(network, tape, cfg):
    """Raise the afferent weights of silent neurons in layers that are too quiet.

    Returns, per neuron layer, the boolean mask of bumped neurons.
    """
    bumped = []
    for blk, (nl, rec) in enumerate(zip(network.neuron_layers, tape.records)):
        if rec.t_out is None:
            bumped.append(np.zeros(nl.n_post, dtype=bool))
            continue
        silent = np.isinf(rec.t_out)
        limit = nl.max_silent_ratio if cfg.max_silent_ratio is None else \
            cfg.max_silent_ratio[min(blk, len(cfg.max_silent_ratio) - 1)]
        mask = np.zeros(nl.n_post, dtype=bool)
        if silent.mean() > limit:
            mask = silent.any(axis=0)
            nl.weights[:, mask] += cfg.bump_value
        bumped.append(mask)
    return bumped


@dataclass
class NoiseHooks:
    """Optional perturbations during training and evaluation."""

    sampler: object = None

    def draw(self, network, batch_size, key):
        if self.sampler is None:
            return None, None
        return self.sampler.draw(network, batch_size, key)


def evaluate(network, x, y, loss_cfg, noise=None, key=(0,), chunk=1000):
    """Return ``(error_rate, mean_loss, predictions)`` on encoded inputs ``x``.

    Noise is drawn once per chunk, so ``chunk`` should equal the training batch
    size for per-batch noise (trial-to-trial offsets) to mean the same thing at
    evaluation as during training.
    """
    noise = noise or NoiseHooks()
    preds = np.empty(len(y), dtype=int)
    losses = np.empty(len(y))
    for c, start in enumerate(range(0, len(y), chunk)):
        sl = slice(start, start + chunk)
        thr, jit = noise.draw(network, len(y[sl]), (*key, c))
        out = network.forward(x[sl], thresholds=thr, jitter=jit).outputs
        preds[sl] = ttfs_decode(out)
        losses[sl] = delta_mse(out, y[sl], loss_cfg)[0]
    return float(np.mean(preds != y)), float(losses.mean()), preds


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row[k] for k in LOG_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_text(self, header=""):
        lines = [f"# {header}"] if header else []
        lines.append("\t".join(LOG_COLUMNS))
        for r in self.rows:
            lines.append("\t".join(str(r["epoch"]) if k == "epoch" else repr(float(r[k]))
                                   for k in LOG_COLUMNS))
        return "\n".join(lines) + "\n"

    def save(self, path, header=""):
        with open(path, "w") as fh:
            fh.write(self.to_text(header))


@dataclass
class TrainResult:
    network: Network
    log: MetricsLog
    optimizer: OptimizerState
    epochs_done: int


def _check_finite(epoch, batch, loss, grads, network):
    bad_grads = [k for k, g in enumerate(grads) if g is not None and not np.all(np.isfinite(g))]
    # a NaN weight makes a neuron look silent rather than poisoning the loss
    bad_params = [k for k, p in enumerate(network.parameters()) if not np.all(np.isfinite(p))]
    if np.isfinite(loss) and not bad_grads and not bad_params:
        return
    state = {"epoch": epoch, "batch": batch, "loss": float(loss), "bad_layers": bad_grads,
             "bad_parameters": bad_params, "network": network.to_dict()}
    raise NumericalAbort(f"non-finite loss, gradient or parameter at epoch {epoch}, "
                         f"batch {batch}", state)


def train(network, train_xy, val_xy, cfg, loss_cfg=None, noise=None, resume=None,
          epoch_callback=None):
    """Train ``network`` in place on ``train_xy = (x, y)``.

    ``resume`` is a checkpoint document from :func:`checkpoint`; training
    continues after its last epoch.  Raises :class:`NumericalAbort` on a
    non-finite loss or gradient.
    """
    loss_cfg = loss_cfg or LossConfig()
    noise = noise or NoiseHooks()
    x, y = (np.asarray(a) for a in train_xy)
    xv, yv = (np.asarray(a) for a in val_xy) if val_xy is not None else (None, None)
    qmax = None
    if network.quantizer is not None and noise.sampler is not None:
        qmax = noise.sampler.model.weight_max

    if resume is not None:
        restored = Network.from_dict(resume["network"], quantizer=network.quantizer)
        network.layers = restored.layers
        opt = OptimizerState.from_dict(resume["optimizer"])
        log_ = MetricsLog(list(resume["log"]))
        start = int(resume["epochs_done"])
    else:
        opt = OptimizerState.zeros_like(network.parameters())
        log_ = MetricsLog()
        start = 0

    n = len(y)
    for epoch in range(start, cfg.epochs):
        lr_w, lr_d = cfg.lr_at(epoch)
        rng = np.random.default_rng([cfg.seed, epoch])
        perm = rng.permutation(n)
        tot_loss = 0.0
        wrong = 0
        for bi, start_i in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start_i:start_i + cfg.batch_size]
            thr, jit = noise.draw(network, len(idx), (epoch, bi))
            tape = network.forward(x[idx], thresholds=thr, jitter=jit)
            out = tape.outputs
            losses, g_out = delta_mse(out, y[idx], loss_cfg)
            B = len(idx)
            grads = network.backward(tape, g_out / B)
            _check_finite(epoch, bi, losses.sum(), grads, network)
            adam_step(network, grads, opt, cfg, lr_w, lr_d, qmax)
            silent_policy(network, tape, cfg)
            tot_loss += float(losses.sum())
            wrong += int(np.sum(ttfs_decode(out) != y[idx]))
        val_err = float("nan")
        if xv is not None:
            val_err = evaluate(network, xv, yv, loss_cfg, noise, key=(epoch, 1 << 20),
                               chunk=cfg.batch_size)[0]
        log_.append(epoch=epoch + 1, train_loss=tot_loss / n, train_err=wrong / n,
                    val_err=val_err, lr_w=lr_w, lr_d=lr_d)
        if not math.isfinite(tot_loss):
            raise NumericalAbort(f"non-finite epoch loss at epoch {epoch}")
        if epoch_callback is not None:
            epoch_callback(TrainResult(network, log_, opt, epoch + 1))
    return TrainResult(network, log_, opt, max(cfg.epochs, start))


def checkpoint(result, cfg=None):
    """Serializable training state (network, optimizer moments, log)."""
    return {"network": result.network.to_dict(), "optimizer": result.optimizer.to_dict(),
            "log": result.log.rows, "epochs_done": result.epochs_done,
            "train_config": None if cfg is None else asdict(cfg)}


def save_checkpoint(path, result, cfg=None):
    with open(path, "w") as fh:
        json.dump(checkpoint(result, cfg), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return json.load(fh)
