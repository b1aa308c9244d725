"""Output losses: the separation-MSE on spike times and a voltage-max loss.

Both return gradients with respect to what the layer below produced
(output spike times for :func:`delta_mse`, weights and input times of the
label neurons for :func:`vmax_loss`), ready for :meth:`Network.backward`.
"""

from dataclasses import dataclass, field

import numpy as np

from .lif import NeuronConfig, TauRatio, WeightedInputs, _kernel, _kernel_dot

AMBIGUITY_TOL = 1e-9


@dataclass
class LossConfig:
    """Loss hyper-parameters.

    ``silent_time`` replaces the time of output neurons that did not spike.
    ``vmax_window`` is the time window searched by :func:`vmax_loss`;
    ``None`` means ``[0, t_late + 3 tau_m]``.
    """

    delta_t: float = 0.2
    a_scale: float = 1.0
    silent_time: float = 3.0
    t_late: float = 2.0
    vmax_window: tuple = None

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if not self.a_scale > 0:
            raise ValueError("a_scale must be positive")
        if not np.isfinite(self.silent_time):
            raise ValueError("silent_time must be finite")

    def window(self, neuron_cfg):
        if self.vmax_window is not None:
            lo, hi = self.vmax_window
        else:
            lo, hi = 0.0, self.t_late + 3.0 * neuron_cfg.tau_m
        if not hi > lo:
            raise ValueError("empty voltage window")
        return float(lo), float(hi)


def default_silent_time(t_late, max_total_delay=0.0):
    """Surrogate for a missing output spike: later than any real spike is likely to be."""
    return float(t_late) + 1.0 + float(max_total_delay)


def delta_mse(out_times, labels, cfg):
    """Separation loss pushing wrong-class spikes ``delta_t`` after the label spike.

    Works on a single sample (1-D times, integer label) or a batch (2-D
    times, 1-D labels).  Returns ``(loss, grads)`` with per-sample losses
    and ``dL/dt`` of the same shape as ``out_times``.
    """
    t = np.asarray(out_times, dtype=float)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if labels.shape != (t.shape[0],):
        raise ValueError("one label per sample required")
    t = np.where(np.isfinite(t), t, cfg.silent_time)
    rows = np.arange(t.shape[0])
    diff = t - t[rows, labels][:, None] - cfg.delta_t
    diff[rows, labels] = 0.0
    loss = 0.5 * np.sum(diff ** 2, axis=1)
    grads = diff.copy()
    grads[rows, labels] = -diff.sum(axis=1)
    if single:
        return float(loss[0]), grads[0]
    return loss, grads


def ttfs_decode(out_times):
    """Index of the earliest output spike (lowest index on ties or if all silent)."""
    t = np.asarray(out_times, dtype=float)
    return np.argmin(np.where(np.isnan(t), np.inf, t), axis=-1)


# -- voltage maximum ----------------------------------------------------------


@dataclass
class VoltageMax:
    u_max: float
    t_max: float
    grad_w: np.ndarray
    grad_t: np.ndarray
    ambiguous: bool = False
    capped_by: int = -1


def _stationary_points(ts, ws, lo, hi, cfg):
    """Zeros of du/dt inside each inter-input interval, clipped to [lo, hi].

    ``ts`` must be sorted.
    """
    if len(ts) == 0:
        return ts
    rel = ts - ts[0]
    e1 = np.exp(rel)
    a1 = np.cumsum(ws * e1)
    bounds = np.append(rel[1:], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        if cfg.tau_ratio is TauRatio.DOUBLE:
            a2 = np.cumsum(ws * np.sqrt(e1))
            cand = np.where((a1 > 0) & (a2 > 0), 2.0 * np.log(2.0 * a1 / a2), np.nan)
        else:
            b = np.cumsum(ws * rel * e1)
            cand = np.where(a1 != 0, 1.0 + b / a1, np.nan)
        keep = (cand > rel) & (cand <= bounds)
    out = cand[keep] + ts[0]
    return out[(out >= lo) & (out <= hi)]


def voltage_max(inputs, neuron_cfg, window):
    """Maximum of the free membrane voltage over ``window`` with its gradient.

    The maximiser is either a stationary point, an input time at which the
    voltage turns down (an inhibitory input) or an end of the window.  When
    several candidates reach the same maximum within ``AMBIGUITY_TOL`` the
    earliest is used and ``ambiguous`` is set.
    """
    lo, hi = window
    order = np.argsort(inputs.times, kind="stable")
    times, w = inputs.times[order], inputs.weights[order]
    inside = times[(times >= lo) & (times <= hi)]
    cands = np.sort(np.concatenate([[lo, hi], inside,
                                    _stationary_points(times, w, lo, hi, neuron_cfg)]))
    g = neuron_cfg.g_leak
    u = np.sum(w * _kernel(cands[:, None] - times, neuron_cfg), axis=1) / g
    best = int(np.argmax(u))
    u_max = float(u[best])
    t_max = float(cands[best])
    near_t = cands[np.abs(u - u_max) <= AMBIGUITY_TOL]
    ambiguous = bool(near_t[-1] - near_t[0] > AMBIGUITY_TOL)

    s = t_max - times
    kd = _kernel_dot(s, neuron_cfg)
    grad_w = _kernel(s, neuron_cfg) / g
    grad_t = -w * kd / g
    capped_by = -1
    at_input = np.flatnonzero(times == t_max)
    if at_input.size and lo < t_max < hi:
        # maximum pinned to an input arrival: moving that input moves the maximum
        if at_input.size > 1:
            ambiguous = True
        grad_t[at_input[0]] += float(np.sum(w * kd) / g)
        capped_by = int(order[at_input[0]])
    gw = np.empty_like(grad_w)
    gt = np.empty_like(grad_t)
    gw[order] = grad_w
    gt[order] = grad_t
    return VoltageMax(u_max, t_max, gw, gt, ambiguous, capped_by)


@dataclass
class VmaxResult:
    loss: float
    grads_w: list
    grads_t: list
    maxima: list = field(default_factory=list)

    @property
    def ambiguous(self):
        return any(m.ambiguous for m in self.maxima)


def vmax_loss(inputs, label, cfg, neuron_cfg=None):
    """Cross-entropy on the scaled voltage maxima of non-spiking label neurons.

    ``inputs`` holds one :class:`WeightedInputs` per label neuron.
    """
    neuron_cfg = neuron_cfg or NeuronConfig()
    window = cfg.window(neuron_cfg)
    maxima = [voltage_max(inp if isinstance(inp, WeightedInputs) else WeightedInputs(*inp),
                          neuron_cfg, window) for inp in inputs]
    z = cfg.a_scale * np.array([m.u_max for m in maxima])
    zs = z - z.max()
    ez = np.exp(zs)
    loss = float(np.log(ez.sum()) - zs[label])
    dz = ez / ez.sum()
    dz[label] -= 1.0
    dz *= cfg.a_scale
    return VmaxResult(loss,
                      [d * m.grad_w for d, m in zip(dz, maxima)],
                      [d * m.grad_t for d, m in zip(dz, maxima)],
                      maxima)


def vmax_loss_batch(t_in, weights, labels, cfg, neuron_cfg):
    """Batched :func:`vmax_loss` on a voltage-readout tape record.

    ``t_in`` is (B, P, Q) arrival times at the label neurons.  Returns the
    mean loss and ``(dL/dW, dL/dt_in)`` scaled by 1/B.
    """
    B, P, Q = t_in.shape
    g_w = np.zeros((P, Q))
    g_t = np.zeros((B, P, Q))
    losses = np.zeros(B)
    for b in range(B):
        ins = []
        for j in range(Q):
            fin = np.isfinite(t_in[b, :, j])
            ins.append(WeightedInputs(t_in[b, fin, j], weights[fin, j]))
        res = vmax_loss(ins, int(labels[b]), cfg, neuron_cfg)
        losses[b] = res.loss
        for j in range(Q):
            fin = np.isfinite(t_in[b, :, j])
            g_w[fin, j] += res.grads_w[j] / B
            g_t[b, fin, j] = res.grads_t[j] / B
    return float(losses.mean()), (g_w, g_t)


def vmax_value(t_in, weights, labels, cfg, neuron_cfg):
    """Mean voltage-max loss of a (B, P, Q) arrival record, without gradients."""
    from ._fastpath import voltage_maxima

    lo, hi = cfg.window(neuron_cfg)
    z = voltage_maxima(t_in, weights, lo, hi, neuron_cfg.tau_ratio is TauRatio.DOUBLE)
    z *= cfg.a_scale / neuron_cfg.g_leak
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    labels = np.asarray(labels, dtype=int)
    return float(np.mean(lse - z[np.arange(len(z)), labels]))
