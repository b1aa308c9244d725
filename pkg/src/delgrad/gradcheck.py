"""Finite-difference checks of the analytic gradients.

Suites:

* ``neuron``  single neurons, first spike and spike trains with reset;
* ``network`` random two-layer networks for every delay kind and both
  losses (spike-time separation loss and voltage-maximum loss).

Instances whose loss is not differentiable at the sampled point (a spike
appears or disappears, the causal set or the voltage maximiser switches
within the difference step) are detected by comparing one-sided
differences and replaced by a fresh draw; their number is reported.
"""

from dataclasses import dataclass, field

import numpy as np

from .graph import DelayKind, build_network
from .lif import NeuronConfig, TauRatio, WeightedInputs, first_spike
from .losses import LossConfig, delta_mse, vmax_loss_batch, vmax_value
from .multispike import spike_train
from .oracle import relative_error

# Components smaller than FLOOR * max(1, |loss|) are compared in absolute
# terms: central differences with h = 1e-6 carry a rounding error of about
# eps * |loss| / h, which swamps a 1e-5 relative test for tiny components.
FLOOR = 1e-3
KINK_TOL = 1e-3

REGIMES = {
    "double": NeuronConfig(TauRatio.DOUBLE, g_leak=0.5, threshold=1.0),
    "equal": NeuronConfig(TauRatio.EQUAL, g_leak=1.0, threshold=2.6),
}


@dataclass
class CheckRow:
    suite: str
    regime: str
    kind: str
    loss: str
    n: int
    max_rel: float
    discarded: int


@dataclass
class Report:
    rows: list = field(default_factory=list)
    tol: float = 1e-5

    @property
    def worst(self):
        return max((r.max_rel for r in self.rows), default=0.0)

    @property
    def ok(self):
        return all(r.max_rel <= self.tol for r in self.rows)

    def lines(self):
        out = [f"{'suite':8s} {'regime':7s} {'kind':10s} {'loss':6s} {'n':>4s} "
               f"{'max_rel':>10s} {'skipped':>7s}"]
        for r in self.rows:
            flag = "" if r.max_rel <= self.tol else "  FAIL"
            out.append(f"{r.suite:8s} {r.regime:7s} {r.kind:10s} {r.loss:6s} {r.n:4d} "
                       f"{r.max_rel:10.2e} {r.discarded:7d}{flag}")
        return out


def _fd(f, x, h):
    """Central differences plus a flag for kinks (one-sided slopes disagree)."""
    x = np.array(x, dtype=float)
    flat = x.reshape(-1)
    f0 = f(x)
    g = np.zeros(flat.size)
    kink = False
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        fwd, bwd = (fp - f0) / h, (f0 - fm) / h
        if not (np.isfinite(fp) and np.isfinite(fm)) or abs(fwd - bwd) > KINK_TOL * max(1.0, abs(fwd)):
            kink = True
        g[i] = (fp - fm) / (2 * h)
    return g.reshape(x.shape), kink


def _max_rel(analytic, numeric, scale=1.0):
    floor = FLOOR * max(1.0, abs(scale))
    return float(np.max(relative_error(analytic, numeric, floor=floor), initial=0.0))


# -- neuron suite -----------------------------------------------------------


def _neuron_instance(rng, cfg, multi):
    n = int(rng.integers(2, 12))
    t = np.sort(rng.uniform(0, 3, n))
    w = rng.normal(1.2 * cfg.drive, 1.0 * cfg.drive, n)
    if multi:
        cfg = NeuronConfig(cfg.tau_ratio, cfg.g_leak, cfg.threshold, v_reset=-0.3 * cfg.threshold,
                           tau_ref=0.3)
        w = np.abs(w) * 1.5
    return t, w, cfg


def neuron_suite(n_instances, rng, h=1e-6, corrupt=False):
    rows = []
    for regime, base in REGIMES.items():
        for multi in (False, True):
            worst, done, skipped = 0.0, 0, 0
            while done < n_instances:
                t, w, cfg = _neuron_instance(rng, base, multi)
                if multi:
                    train = spike_train(WeightedInputs(t, w), cfg)
                    if len(train) < 2:
                        skipped += 1
                        continue
                    res = train.spikes[-1]
                    k = len(train) - 1

                    def T(tt, ww):
                        tr = spike_train(WeightedInputs(tt, ww), cfg)
                        return tr.spikes[k].spike_time if len(tr) > k else np.nan
                else:
                    res = first_spike(WeightedInputs(t, w), cfg)
                    if not res.has_spike:
                        skipped += 1
                        continue

                    def T(tt, ww):
                        r = first_spike(WeightedInputs(tt, ww), cfg)
                        return r.spike_time if r.has_spike else np.nan
                gw, kw = _fd(lambda v: T(t, v), w, h)
                gt, kt = _fd(lambda v: T(v, w), t, h)
                if kw or kt:
                    skipped += 1
                    continue
                sign = -1.0 if corrupt else 1.0
                scale = res.spike_time
                worst = max(worst, _max_rel(sign * res.grad_w, gw, scale),
                            _max_rel(sign * res.grad_t, gt, scale))
                done += 1
            rows.append(CheckRow("neuron", regime, "train" if multi else "first", "time",
                                 done, worst, skipped))
    return rows


# -- network suite ----------------------------------------------------------


def _random_network(rng, cfg, kind):
    sizes = [int(rng.integers(2, 5)), int(rng.integers(3, 6)), int(rng.integers(2, 4))]
    d = cfg.drive
    net = build_network(sizes, kind, cfg, weight_init=((1.5 * d, 1.0 * d), (2.0 * d, 1.0 * d)),
                        delay_init=(0.0, 1.0), scale=1.0, shift=0.0, rng=rng)
    B = int(rng.integers(1, 4))
    x = rng.uniform(0.0, 2.0, (B, sizes[0]))
    y = rng.integers(0, sizes[-1], B)
    return net, x, y


def _loss_and_grads(net, x, y, loss, lcfg, cfg):
    if loss == "dmse":
        tape = net.forward(x)
        losses, g = delta_mse(tape.outputs, y, lcfg)
        return float(losses.mean()), net.backward(tape, g / len(y)), tape
    tape = net.forward(x, voltage_readout=True)
    rec = tape.records[-1]
    val, last = vmax_loss_batch(rec.t_in, net.neuron_layers[-1].weights, y, lcfg, cfg)
    return val, net.backward(tape, last_grads=last), tape


def _loss_only(net, x, y, loss, lcfg, cfg):
    if loss == "dmse":
        return float(delta_mse(net.forward(x).outputs, y, lcfg)[0].mean())
    rec = net.forward(x, voltage_readout=True).records[-1]
    return vmax_value(rec.t_in, net.neuron_layers[-1].weights, y, lcfg, cfg)


def network_suite(n_instances, rng, h=1e-6, corrupt=False, kinds=None, losses=("dmse", "vmax")):
    kinds = kinds or [k.value for k in DelayKind]
    rows = []
    for regime, cfg in REGIMES.items():
        for kind in kinds:
            for loss in losses:
                lcfg = LossConfig(delta_t=0.2, silent_time=6.0, t_late=2.0)
                worst, done, skipped = 0.0, 0, 0
                while done < n_instances:
                    net, x, y = _random_network(rng, cfg, kind)
                    val, grads, tape = _loss_and_grads(net, x, y, loss, lcfg, cfg)
                    if loss == "dmse" and np.isinf(tape.outputs).all():
                        skipped += 1
                        continue
                    params = net.parameters()
                    local = 0.0
                    kinked = False
                    for k, p in enumerate(params):
                        if p.size == 0:
                            continue

                        def f(v, k=k):
                            old = params[k].copy()
                            params[k][...] = v
                            out = _loss_only(net, x, y, loss, lcfg, cfg)
                            params[k][...] = old
                            return out

                        num, kink = _fd(f, params[k].copy(), h)
                        if kink:
                            kinked = True
                            break
                        g = -grads[k] if corrupt else grads[k]
                        local = max(local, _max_rel(g, num, val))
                    if kinked:
                        skipped += 1
                        continue
                    worst = max(worst, local)
                    done += 1
                rows.append(CheckRow("network", regime, kind, loss, done, worst, skipped))
    return rows


def run_gradcheck(n_instances=100, seed=0, tol=1e-5, h=1e-6, corrupt=False,
                  suites=("neuron", "network")):
    rng = np.random.default_rng(seed)
    report = Report(tol=tol)
    if "neuron" in suites:
        report.rows += neuron_suite(n_instances, rng, h, corrupt)
    if "network" in suites:
        report.rows += network_suite(n_instances, rng, h, corrupt)
    return report
