"""Closed-form first-spike times of a current-based LIF neuron.

All times are measured in units of the synaptic time constant, so
``tau_s == 1`` throughout.  Two membrane regimes admit an analytic spike
time: equal time constants (``tau_m == tau_s``, Lambert W solution) and
``tau_m == 2 tau_s`` (quadratic solution).

The module offers a scalar API (:func:`first_spike` and friends) that reads
like the math, and :func:`solve_layer`, a vectorised version used by the
network code for whole batches at once.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .special import BRANCH_POINT, lambert_w0

# Discriminants slightly below zero, relative to the size of the two terms,
# are clamped to zero (tangency).
DISC_SLACK = 1e-12


class TauRatio(str, Enum):
    EQUAL = "equal"
    DOUBLE = "double"


@dataclass(frozen=True)
class NeuronConfig:
    """Neuron constants. ``e_leak`` is fixed to zero; times are in tau_s."""

    tau_ratio: TauRatio = TauRatio.DOUBLE
    g_leak: float = 0.5
    threshold: float = 1.0
    v_reset: float = 0.0
    e_leak: float = 0.0
    tau_ref: float = float("inf")

    def __post_init__(self):
        object.__setattr__(self, "tau_ratio", TauRatio(self.tau_ratio))
        if not self.g_leak > 0:
            raise ValueError("g_leak must be positive")
        if not self.threshold > self.e_leak:
            raise ValueError("threshold must exceed e_leak")
        if not self.tau_ref >= 0:
            raise ValueError("tau_ref must be non-negative")
        if self.e_leak != 0.0:
            raise ValueError("only e_leak == 0 is supported")

    @property
    def tau_s(self):
        return 1.0

    @property
    def tau_m(self):
        return 1.0 if self.tau_ratio is TauRatio.EQUAL else 2.0

    @property
    def drive(self):
        """g_leak * threshold, the right-hand side of the crossing equation."""
        return self.g_leak * self.threshold

    def with_threshold(self, threshold):
        return NeuronConfig(self.tau_ratio, self.g_leak, threshold, self.v_reset,
                            self.e_leak, self.tau_ref)


@dataclass
class WeightedInputs:
    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.times.shape != self.weights.shape:
            raise ValueError("times and weights must have equal length")
        if not np.all(np.isfinite(self.times)):
            raise ValueError("input times must be finite")

    def __len__(self):
        return len(self.times)

    def shifted(self, delta):
        return WeightedInputs(self.times + delta, self.weights.copy())


@dataclass
class SpikeResult:
    """Output spike of one neuron with the local derivatives of its time.

    ``grad_w`` and ``grad_t`` are indexed like the inputs that produced the
    result and vanish outside the causal set.
    """

    spike_time: float | None
    causal_set: np.ndarray
    grad_w: np.ndarray
    grad_t: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def has_spike(self):
        return self.spike_time is not None

    @classmethod
    def silent(cls, n):
        return cls(None, np.zeros(0, dtype=int), np.zeros(n), np.zeros(n))


def coefficients(inputs, causal, cfg=None):
    """Sums a1, a2 and b over the causal set.

    a_n = sum_i w_i exp(t_i / n) and b = sum_i w_i t_i exp(t_i).
    """
    idx = np.asarray(causal, dtype=int)
    t = inputs.times[idx]
    w = inputs.weights[idx]
    e1 = np.exp(t)
    return float(np.sum(w * e1)), float(np.sum(w * np.exp(0.5 * t))), float(np.sum(w * t * e1))


# -- closed forms with their partial derivatives (vectorised) ---------------

def double_tau_partials(a1, a2, drive):
    """Spike time for tau_m = 2 tau_s and its partials w.r.t. a1 and a2.

    Returns ``(T, dT/da1, dT/da2)``; entries without a spike hold NaN.
    """
    a1, a2, drive = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, a2, drive)))
    disc = a2 * a2 - 4.0 * a1 * drive
    slack = DISC_SLACK * (a2 * a2 + np.abs(4.0 * a1 * drive))
    disc = np.where((disc < 0) & (disc > -slack), 0.0, disc)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sqrt(disc)
        denom = a2 + s
        ratio = 2.0 * a1 / denom
        ok = (a1 > 0) & (disc >= 0) & (denom > 0) & (ratio > 1.0)
        T = np.where(ok, 2.0 * np.log(ratio), np.nan)
        dT_da1 = np.where(ok, 2.0 / a1 + 4.0 * drive / (denom * s), np.nan)
        dT_da2 = np.where(ok, -2.0 / s, np.nan)
    return T, dT_da1, dT_da2


def equal_tau_partials(a1, b, drive):
    """Spike time for tau_m = tau_s and its partials w.r.t. a1 and b.

    Returns ``(T, dT/da1, dT/db)``; entries without a spike hold NaN.
    """
    a1, b, drive = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a1, b, drive)))
    pos = a1 > 0
    safe_a1 = np.where(pos, a1, 1.0)
    r = b / safe_a1
    with np.errstate(over="ignore", invalid="ignore"):
        z = -(drive / safe_a1) * np.exp(r)
    ok = pos & np.isfinite(z) & (z >= BRANCH_POINT - 4e-16)
    W = np.full(z.shape, np.nan)
    if ok.any():
        W[ok] = lambert_w0(z[ok])
    with np.errstate(invalid="ignore", divide="ignore"):
        T = np.where(ok, r - W, np.nan)
        onepw = 1.0 + W
        dT_da1 = np.where(ok, -r / safe_a1 + W * (1.0 + r) / (safe_a1 * onepw), np.nan)
        dT_db = np.where(ok, 1.0 / (safe_a1 * onepw), np.nan)
    return T, dT_da1, dT_db


def spike_time_equal_tau(a1, b, cfg):
    """Threshold-crossing time for tau_m = tau_s, or None without a spike."""
    T, _, _ = equal_tau_partials(a1, b, cfg.drive)
    return None if np.isnan(T) else float(T)


def spike_time_double_tau(a1, a2, cfg):
    """Threshold-crossing time for tau_m = 2 tau_s, or None without a spike."""
    T, _, _ = double_tau_partials(a1, a2, cfg.drive)
    return None if np.isnan(T) else float(T)


def _kernel(s, cfg):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    sp = np.where(pos, s, 0.0)
    if cfg.tau_ratio is TauRatio.EQUAL:
        k = sp * np.exp(-sp)
    else:
        k = np.exp(-0.5 * sp) - np.exp(-sp)
    return np.where(pos, k, 0.0)


def _kernel_dot(s, cfg):
    """Time derivative of the PSP kernel for s > 0 (zero for s <= 0)."""
    s = np.asarray(s, dtype=float)
    pos = s > 0
    sp = np.where(pos, s, 0.0)
    if cfg.tau_ratio is TauRatio.EQUAL:
        k = (1.0 - sp) * np.exp(-sp)
    else:
        k = -0.5 * np.exp(-0.5 * sp) + np.exp(-sp)
    return np.where(pos, k, 0.0)


def membrane_voltage(inputs, t, cfg):
    """Subthreshold membrane voltage u(t) as a sum of PSP kernels.

    ``t`` may be a scalar or an array of probe times.
    """
    t = np.asarray(t, dtype=float)
    s = t[..., None] - inputs.times
    u = np.sum(inputs.weights * _kernel(s, cfg), axis=-1) / cfg.g_leak
    return float(u) if u.ndim == 0 else u


def membrane_voltage_dot(inputs, t, cfg):
    """Left time derivative of u at ``t`` (inputs arriving at ``t`` excluded)."""
    t = np.asarray(t, dtype=float)
    s = t[..., None] - inputs.times
    du = np.sum(inputs.weights * _kernel_dot(s, cfg), axis=-1) / cfg.g_leak
    return float(du) if du.ndim == 0 else du


def _local_grads(cfg, t_rel, w, dA1, dA2orB):
    """dT/dw and dT/dt for causal inputs given partials through a1, a2/b."""
    e1 = np.exp(t_rel)
    with np.errstate(invalid="ignore"):
        if cfg.tau_ratio is TauRatio.DOUBLE:
            e2 = np.exp(0.5 * t_rel)
            gw = dA1 * e1 + dA2orB * e2
            gt = w * (dA1 * e1 + 0.5 * dA2orB * e2)
        else:
            gw = dA1 * e1 + dA2orB * t_rel * e1
            gt = w * (dA1 * e1 + dA2orB * (1.0 + t_rel) * e1)
    return gw, gt


def first_spike(inputs, cfg, threshold=None):
    """Earliest output spike for the given inputs, with exact local gradients.

    Scans prefixes of the time-ordered inputs and accepts the first prefix
    whose closed-form crossing time lies in ``(t_k, t_{k+1}]``.  Times are
    shifted so that the first input arrives at zero before the closed form
    is evaluated; this keeps the exponentials bounded and makes the result
    exactly shift-equivariant.
    """
    n = len(inputs)
    if n == 0:
        return SpikeResult.silent(0)
    drive = cfg.g_leak * (cfg.threshold if threshold is None else threshold)
    order = np.argsort(inputs.times, kind="stable")
    ts = inputs.times[order]
    ws = inputs.weights[order]
    t0 = ts[0]
    rel = WeightedInputs(ts - t0, ws)

    for k in range(n):
        if k + 1 < n and ts[k + 1] == ts[k]:
            continue
        a1, a2, b = coefficients(rel, np.arange(k + 1))
        if cfg.tau_ratio is TauRatio.DOUBLE:
            T, dA1, dX = double_tau_partials(a1, a2, drive)
        else:
            T, dA1, dX = equal_tau_partials(a1, b, drive)
        T = float(T)
        if np.isnan(T):
            continue
        t_next = rel.times[k + 1] if k + 1 < n else np.inf
        if rel.times[k] < T <= t_next:
            gw_s, gt_s = _local_grads(cfg, rel.times[:k + 1], ws[:k + 1], float(dA1), float(dX))
            grad_w = np.zeros(n)
            grad_t = np.zeros(n)
            grad_w[order[:k + 1]] = gw_s
            grad_t[order[:k + 1]] = gt_s
            return SpikeResult(float(T + t0), np.sort(order[:k + 1]), grad_w, grad_t)
    return SpikeResult.silent(n)


def solve_layer(t_in, weights, cfg, threshold=None, backend="compiled"):
    """First-spike solve for a batch of neurons (see :func:`solve_layer_numpy`).

    ``backend="compiled"`` runs the same scan in a compiled loop that stops
    at the first admissible prefix; ``"numpy"`` uses the vectorised version.
    """
    if backend == "numpy":
        return solve_layer_numpy(t_in, weights, cfg, threshold)
    if backend != "compiled":
        raise ValueError(f"unknown backend {backend!r}")
    from ._fastpath import solve_layer_fast

    B, P, Q = t_in.shape
    thr = cfg.threshold if threshold is None else np.asarray(threshold, dtype=float)
    drive = np.broadcast_to(cfg.g_leak * np.asarray(thr, dtype=float), (B, Q))
    return solve_layer_fast(t_in, weights, drive, cfg.tau_ratio is TauRatio.DOUBLE, DISC_SLACK)


def solve_layer_numpy(t_in, weights, cfg, threshold=None):
    """Vectorised first-spike solve for a batch of neurons.

    Parameters
    ----------
    t_in : array (B, P, Q)
        Arrival time of presynaptic spike ``i`` at postsynaptic neuron ``j``
        for each sample; ``inf`` marks a missing spike.
    weights : array (P, Q)
    threshold : None, array (Q,) or (B, Q)
        Per-neuron thresholds overriding ``cfg.threshold``.

    Returns
    -------
    T : array (B, Q), ``inf`` for silent neurons
    dT_dw, dT_dt : arrays (B, P, Q), zero outside the causal sets
    """
    B, P, Q = t_in.shape
    thr = cfg.threshold if threshold is None else np.asarray(threshold, dtype=float)
    drive = np.broadcast_to(cfg.g_leak * np.asarray(thr, dtype=float), (B, Q))[:, None, :]

    order = np.argsort(t_in, axis=1, kind="stable")
    ts = np.take_along_axis(t_in, order, axis=1)
    ws = np.take_along_axis(np.broadcast_to(weights, (B, P, Q)), order, axis=1)
    finite = np.isfinite(ts)
    t0 = np.where(finite[:, :1, :], ts[:, :1, :], 0.0)
    rel = np.where(finite, ts - t0, 0.0)
    w0 = np.where(finite, ws, 0.0)

    e1 = np.exp(rel)
    A1 = np.cumsum(w0 * e1, axis=1)
    if cfg.tau_ratio is TauRatio.DOUBLE:
        e2 = np.exp(0.5 * rel)
        A2 = np.cumsum(w0 * e2, axis=1)
        T, dA1, dX = double_tau_partials(A1, A2, drive)
    else:
        Bc = np.cumsum(w0 * rel * e1, axis=1)
        T, dA1, dX = equal_tau_partials(A1, Bc, drive)

    t_next = np.concatenate([rel[:, 1:, :], np.full((B, 1, Q), np.inf)], axis=1)
    t_next = np.where(np.concatenate([finite[:, 1:, :], np.zeros((B, 1, Q), bool)], axis=1),
                      t_next, np.inf)
    with np.errstate(invalid="ignore"):
        valid = finite & (T > rel) & (T <= t_next)
    has = valid.any(axis=1)
    k = np.argmax(valid, axis=1)[:, None, :]
    T_k = np.take_along_axis(T, k, axis=1)[:, 0, :]
    dA1_k = np.take_along_axis(dA1, k, axis=1)
    dX_k = np.take_along_axis(dX, k, axis=1)
    out_T = np.where(has, T_k + t0[:, 0, :], np.inf)

    causal = (np.arange(P)[None, :, None] <= k) & has[:, None, :]
    dA1_k = np.where(has[:, None, :], dA1_k, 0.0)
    dX_k = np.where(has[:, None, :], dX_k, 0.0)
    gw, gt = _local_grads(cfg, rel, w0, dA1_k, dX_k)
    gw = np.where(causal, gw, 0.0)
    gt = np.where(causal, gt, 0.0)

    dT_dw = np.empty_like(gw)
    dT_dt = np.empty_like(gt)
    np.put_along_axis(dT_dw, order, gw, axis=1)
    np.put_along_axis(dT_dt, order, gt, axis=1)
    return out_T, dT_dw, dT_dt
