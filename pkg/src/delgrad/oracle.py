"""Independent reference simulators used to validate the closed forms.

A fixed-step RK4 integrator of the LIF ODE (membrane plus exponential
synaptic current) with reset and refractoriness, and central
finite-difference helpers.  Nothing here uses the closed-form solutions;
input arrivals and refractory ends split the step, threshold crossings are
located by linear interpolation inside the step that crosses.
"""

import numpy as np
from numba import njit

DEFAULT_DT = 1e-5


@njit(cache=True)
def _rk4(u, cur, h, tau_m, g_leak, clamp, v_reset):
    if clamp:
        # membrane held at reset, current decays freely
        k1 = -cur
        k2 = -(cur + 0.5 * h * k1)
        k3 = -(cur + 0.5 * h * k2)
        k4 = -(cur + h * k3)
        return v_reset, cur + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    k1u = (-u + cur / g_leak) / tau_m
    k1i = -cur
    u2 = u + 0.5 * h * k1u
    i2 = cur + 0.5 * h * k1i
    k2u = (-u2 + i2 / g_leak) / tau_m
    k2i = -i2
    u3 = u + 0.5 * h * k2u
    i3 = cur + 0.5 * h * k2i
    k3u = (-u3 + i3 / g_leak) / tau_m
    k3i = -i3
    u4 = u + h * k3u
    i4 = cur + h * k3i
    k4u = (-u4 + i4 / g_leak) / tau_m
    k4i = -i4
    return (u + h * (k1u + 2 * k2u + 2 * k3u + k4u) / 6.0,
            cur + h * (k1i + 2 * k2i + 2 * k3i + k4i) / 6.0)


@njit(cache=True)
def _simulate(times, weights, tau_m, g_leak, threshold, v_reset, tau_ref,
              t_end, dt, max_spikes, probes):
    n = times.shape[0]
    spikes = np.empty(max_spikes)
    n_spikes = 0
    probe_vals = np.zeros(probes.shape[0])
    if n == 0:
        return spikes[:0], probe_vals
    t = times[0]
    for p in range(probes.shape[0]):
        if probes[p] <= t:
            probe_vals[p] = 0.0
    u = 0.0
    cur = 0.0
    ref_until = -np.inf
    dead = False
    k = 0
    p = 0
    while p < probes.shape[0] and probes[p] <= t:
        p += 1
    while t < t_end and not dead:
        while k < n and times[k] <= t:
            cur += weights[k]
            k += 1
        t_next = t + dt
        if k < n and times[k] < t_next:
            t_next = times[k]
        if ref_until > t and ref_until < t_next:
            t_next = ref_until
        if p < probes.shape[0] and probes[p] < t_next:
            t_next = probes[p]
        if t_next > t_end:
            t_next = t_end
        h = t_next - t
        clamp = ref_until > t
        u_new, cur_new = _rk4(u, cur, h, tau_m, g_leak, clamp, v_reset)
        if (not clamp) and u_new >= threshold and u < threshold:
            frac = (threshold - u) / (u_new - u)
            t_sp = t + frac * h
            spikes[n_spikes] = t_sp
            n_spikes += 1
            if n_spikes >= max_spikes or tau_ref == np.inf:
                dead = True
                break
            _, cur = _rk4(u, cur, t_sp - t, tau_m, g_leak, True, v_reset)
            u = v_reset
            ref_until = t_sp + tau_ref
            t = t_sp
            continue
        u = u_new
        cur = cur_new
        t = t_next
        while p < probes.shape[0] and probes[p] <= t:
            probe_vals[p] = u
            p += 1
    return spikes[:n_spikes], probe_vals


def simulate_neuron(times, weights, cfg, threshold=None, t_end=None, dt=DEFAULT_DT,
                    max_spikes=64, probes=None):
    """Integrate one neuron and return its output spike times.

    With ``probes`` given, also returns the membrane voltage at those times
    (only meaningful before the first reset).
    """
    times = np.asarray(times, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = np.isfinite(times)
    times, weights = times[keep], weights[keep]
    order = np.argsort(times, kind="stable")
    times, weights = times[order], weights[order]
    if t_end is None:
        t_end = (times[-1] if len(times) else 0.0) + 20.0
    thr = cfg.threshold if threshold is None else float(threshold)
    pr = np.sort(np.asarray([] if probes is None else probes, dtype=float))
    spikes, vals = _simulate(times, weights, cfg.tau_m, cfg.g_leak, thr, cfg.v_reset,
                             cfg.tau_ref, float(t_end), float(dt), int(max_spikes), pr)
    if probes is None:
        return spikes
    return spikes, vals


def simulate_network(input_times, layers, cfg, dt=DEFAULT_DT, thresholds=None):
    """Layer-by-layer reference simulation of a feed-forward network.

    ``layers`` is a list of ``(delays, weights)`` pairs where ``delays`` has
    shape broadcastable to (P, Q).  Only first spikes are propagated.
    Returns the list of per-layer first-spike time vectors (inf if silent).
    """
    t = np.asarray(input_times, dtype=float)
    out = []
    for li, (delays, weights) in enumerate(layers):
        P, Q = weights.shape
        d = np.broadcast_to(np.asarray(delays, dtype=float), (P, Q))
        nxt = np.full(Q, np.inf)
        for j in range(Q):
            thr = None if thresholds is None else thresholds[li][j]
            sp = simulate_neuron(t + d[:, j], weights[:, j], cfg, threshold=thr, dt=dt,
                                 max_spikes=1)
            if len(sp):
                nxt[j] = sp[0]
        out.append(nxt)
        t = nxt
    return out


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
