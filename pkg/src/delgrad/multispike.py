"""Multi-spike extension of the closed-form solver.

After a spike at ``T`` the membrane is clamped to ``v_reset`` until
``t_tilde = T + tau_ref`` while the synaptic current keeps decaying.  From
``t_tilde`` on, the residual current acts like a virtual input spike of
weight ``i_tilde`` at ``t_tilde`` and the reset voltage like a decaying
offset, so the next spike has the same closed form as the first one with
modified coefficients:

    double tau:  a1' = a1 + I~,  a2' = a2 + I~ + g_leak * u~
    equal tau:   a1' = a1 + I~,  b'  = b - g_leak * u~

(all with the time origin moved to ``t_tilde``).
"""

from dataclasses import dataclass, field

import numpy as np

from .lif import SpikeResult, TauRatio, double_tau_partials, equal_tau_partials, first_spike

DEFAULT_MAX_SPIKES = 16


@dataclass
class ResidualState:
    t_tilde: float
    u_tilde: float
    i_tilde: float

    def __post_init__(self):
        if not np.isfinite(self.i_tilde):
            raise ValueError("residual current must be finite")


@dataclass
class SpikeTrain:
    spikes: list = field(default_factory=list)
    truncated: bool = False

    @property
    def times(self):
        return np.array([s.spike_time for s in self.spikes])

    def __len__(self):
        return len(self.spikes)


def residual_current(inputs, t_tilde, cfg=None):
    """Synaptic current at ``t_tilde`` from all inputs strictly before it."""
    before = inputs.times < t_tilde
    return float(np.sum(inputs.weights[before] * np.exp(-(t_tilde - inputs.times[before]))))


def next_spike(inputs, state, cfg, threshold=None):
    """Next spike after the refractory period described by ``state``.

    ``grad_w``/``grad_t`` hold the direct derivatives with respect to the
    inputs arriving at or after ``t_tilde``.  The derivatives with respect
    to the state are returned in ``extra`` under ``d_i_tilde``,
    ``d_u_tilde`` and ``d_t_tilde`` (the latter at fixed ``i_tilde``).
    """
    n = len(inputs)
    drive = cfg.g_leak * (cfg.threshold if threshold is None else threshold)
    after = np.flatnonzero(inputs.times >= state.t_tilde)
    after = after[np.argsort(inputs.times[after], kind="stable")]
    r = inputs.times[after] - state.t_tilde
    w = inputs.weights[after]
    e1 = np.exp(r)
    gu = cfg.g_leak * state.u_tilde
    double = cfg.tau_ratio is TauRatio.DOUBLE
    e2 = np.exp(0.5 * r)

    # prefix -1 is the virtual spike alone
    for k in range(-1, len(after)):
        if k + 1 < len(after) and r[k + 1] == (r[k] if k >= 0 else 0.0):
            continue
        sl = slice(0, k + 1)
        a1 = state.i_tilde + np.sum(w[sl] * e1[sl])
        if double:
            a2 = state.i_tilde + gu + np.sum(w[sl] * e2[sl])
            T, dA1, dX = double_tau_partials(a1, a2, drive)
        else:
            b = np.sum(w[sl] * r[sl] * e1[sl]) - gu
            T, dA1, dX = equal_tau_partials(a1, b, drive)
        T, dA1, dX = float(T), float(dA1), float(dX)
        if np.isnan(T):
            continue
        lo = r[k] if k >= 0 else 0.0
        hi = r[k + 1] if k + 1 < len(after) else np.inf
        if not lo < T <= hi:
            continue
        rs, ws = r[sl], w[sl]
        if double:
            gw = dA1 * np.exp(rs) + dX * np.exp(0.5 * rs)
            gt = ws * (dA1 * np.exp(rs) + 0.5 * dX * np.exp(0.5 * rs))
            d_i = dA1 + dX
            d_u = cfg.g_leak * dX
        else:
            gw = dA1 * np.exp(rs) + dX * rs * np.exp(rs)
            gt = ws * (dA1 * np.exp(rs) + dX * (1.0 + rs) * np.exp(rs))
            d_i = dA1
            d_u = -cfg.g_leak * dX
        grad_w = np.zeros(n)
        grad_t = np.zeros(n)
        grad_w[after[sl]] = gw
        grad_t[after[sl]] = gt
        extra = {"d_i_tilde": d_i, "d_u_tilde": d_u, "d_t_tilde": 1.0 - float(np.sum(gt))}
        return SpikeResult(float(state.t_tilde + T), np.sort(after[sl]), grad_w, grad_t, extra)
    res = SpikeResult.silent(n)
    res.extra = {"d_i_tilde": 0.0, "d_u_tilde": 0.0, "d_t_tilde": 0.0}
    return res


def spike_train(inputs, cfg, max_spikes=DEFAULT_MAX_SPIKES, threshold=None):
    """All output spikes of one neuron, each with total input gradients.

    Unlike :func:`next_spike`, every returned result carries the full
    derivative of its spike time with respect to all input weights and
    times, including the paths through earlier spikes and residual currents.
    ``truncated`` is set when the neuron would spike more than
    ``max_spikes`` times.
    """
    if max_spikes < 1:
        raise ValueError("max_spikes must be at least 1")
    first = first_spike(inputs, cfg, threshold=threshold)
    train = SpikeTrain()
    if not first.has_spike:
        return train
    train.spikes.append(first)
    if not np.isfinite(cfg.tau_ref):
        return train

    prev = first
    while True:
        t_tilde = prev.spike_time + cfg.tau_ref
        before = inputs.times < t_tilde
        decay = np.where(before, np.exp(-(t_tilde - inputs.times)), 0.0)
        i_tilde = float(np.sum(inputs.weights * decay))
        state = ResidualState(t_tilde, cfg.v_reset, i_tilde)
        nxt = next_spike(inputs, state, cfg, threshold=threshold)
        if not nxt.has_spike:
            return train
        if len(train.spikes) >= max_spikes:
            train.truncated = True
            return train
        d_i = nxt.extra["d_i_tilde"]
        # total derivative w.r.t. t_tilde, including dI~/dt~ = -I~
        d_tt = nxt.extra["d_t_tilde"] - d_i * i_tilde
        grad_w = nxt.grad_w + d_i * decay + d_tt * prev.grad_w
        grad_t = nxt.grad_t + d_i * inputs.weights * decay + d_tt * prev.grad_t
        res = SpikeResult(nxt.spike_time, nxt.causal_set, grad_w, grad_t, dict(nxt.extra))
        train.spikes.append(res)
        prev = res
