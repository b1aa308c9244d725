"""Compiled per-neuron prefix scan, the fast path behind ``lif.solve_layer``.

Numerically the same closed forms as the numpy implementation in
:mod:`delgrad.lif`; the loop exits at the first admissible prefix instead of
evaluating every prefix.  Tested for agreement with the numpy path.
"""

import math

import numpy as np
from numba import njit

_BRANCH = -math.exp(-1.0)


@njit(cache=True, error_model="numpy")
def _w0(z):
    if z <= _BRANCH:
        return -1.0
    if z == 0.0:
        return 0.0
    if z < -0.25:
        p = math.sqrt(max(2.0 * (math.e * z + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z <= 3.0:
        w = z * (1.0 + 4.0 / 3.0 * z) / (1.0 + 7.0 / 3.0 * z + 5.0 / 6.0 * z * z)
    else:
        l1 = math.log(z)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    for _ in range(50):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 2e-16 * (1.0 + abs(w)):
            break
    return w


@njit(cache=True, error_model="numpy")
def _solve(t_in, weights, drive, double, disc_slack, T_out, gw_out, gt_out):
    # t_in is (B, Q, P) and weights (Q, P) so the scan reads contiguous memory
    B, Q, P = t_in.shape
    ts = np.empty(P)
    ws = np.empty(P)
    order = np.empty(P, dtype=np.int64)
    for b in range(B):
        for q in range(Q):
            n = 0
            for i in range(P):
                t = t_in[b, q, i]
                if not math.isfinite(t):
                    continue
                # stable insertion sort of the finite arrivals
                j = n
                while j > 0 and ts[j - 1] > t:
                    ts[j] = ts[j - 1]
                    ws[j] = ws[j - 1]
                    order[j] = order[j - 1]
                    j -= 1
                ts[j] = t
                ws[j] = weights[q, i]
                order[j] = i
                n += 1
            T_out[b, q] = math.inf
            if n == 0:
                continue
            t0 = ts[0]
            c = drive[b, q]
            a1 = 0.0
            a2 = 0.0
            bb = 0.0
            for k in range(n):
                r = ts[k] - t0
                e1 = math.exp(r)
                a1 += ws[k] * e1
                if double:
                    a2 += ws[k] * math.exp(0.5 * r)
                else:
                    bb += ws[k] * r * e1
                r_next = ts[k + 1] - t0 if k + 1 < n else math.inf
                if r_next == r or a1 <= 0.0:
                    continue
                if double:
                    disc = a2 * a2 - 4.0 * a1 * c
                    if disc < 0.0:
                        if disc > -disc_slack * (a2 * a2 + abs(4.0 * a1 * c)):
                            disc = 0.0
                        else:
                            continue
                    s = math.sqrt(disc)
                    den = a2 + s
                    if den <= 0.0:
                        continue
                    ratio = 2.0 * a1 / den
                    if ratio <= 1.0:
                        continue
                    T = 2.0 * math.log(ratio)
                    if not (r < T <= r_next):
                        continue
                    dA1 = 2.0 / a1 + 4.0 * c / (den * s)
                    dX = -2.0 / s
                else:
                    rr = bb / a1
                    z = -(c / a1) * math.exp(rr)
                    if not math.isfinite(z) or z < _BRANCH - 4e-16:
                        continue
                    W = _w0(z)
                    T = rr - W
                    if not (r < T <= r_next):
                        continue
                    dA1 = -rr / a1 + W * (1.0 + rr) / (a1 * (1.0 + W))
                    dX = 1.0 / (a1 * (1.0 + W))
                T_out[b, q] = T + t0
                for j in range(k + 1):
                    rj = ts[j] - t0
                    e1 = math.exp(rj)
                    idx = order[j]
                    if double:
                        e2 = math.exp(0.5 * rj)
                        gw_out[b, q, idx] = dA1 * e1 + dX * e2
                        gt_out[b, q, idx] = ws[j] * (dA1 * e1 + 0.5 * dX * e2)
                    else:
                        gw_out[b, q, idx] = dA1 * e1 + dX * rj * e1
                        gt_out[b, q, idx] = ws[j] * (dA1 * e1 + dX * (1.0 + rj) * e1)
                break


def solve_layer_fast(t_in, weights, drive, double, disc_slack):
    B, P, Q = t_in.shape
    T = np.empty((B, Q))
    gw = np.zeros((B, Q, P))
    gt = np.zeros((B, Q, P))
    _solve(np.ascontiguousarray(np.swapaxes(t_in, 1, 2), dtype=float),
           np.ascontiguousarray(weights.T, dtype=float),
           np.ascontiguousarray(drive, dtype=float), bool(double), float(disc_slack), T, gw, gt)
    return T, np.swapaxes(gw, 1, 2), np.swapaxes(gt, 1, 2)


@njit(cache=True, error_model="numpy")
def _voltage_at(t, ts, ws, n, double):
    u = 0.0
    for i in range(n):
        s = t - ts[i]
        if s > 0.0:
            if double:
                u += ws[i] * (math.exp(-0.5 * s) - math.exp(-s))
            else:
                u += ws[i] * s * math.exp(-s)
    return u


@njit(cache=True, error_model="numpy")
def _vmax(t_in, weights, lo, hi, double, z_out):
    # t_in is (B, Q, P); z_out receives the maximum of sum_i w_i k(t - t_i)
    B, Q, P = t_in.shape
    ts = np.empty(P)
    ws = np.empty(P)
    for b in range(B):
        for q in range(Q):
            n = 0
            for i in range(P):
                t = t_in[b, q, i]
                if not math.isfinite(t):
                    continue
                j = n
                while j > 0 and ts[j - 1] > t:
                    ts[j] = ts[j - 1]
                    ws[j] = ws[j - 1]
                    j -= 1
                ts[j] = t
                ws[j] = weights[q, i]
                n += 1
            best = max(_voltage_at(lo, ts, ws, n, double), _voltage_at(hi, ts, ws, n, double))
            a1 = 0.0
            a2 = 0.0
            bb = 0.0
            for k in range(n):
                if lo <= ts[k] <= hi:
                    best = max(best, _voltage_at(ts[k], ts, ws, n, double))
                rel = ts[k] - ts[0]
                e1 = math.exp(rel)
                a1 += ws[k] * e1
                if double:
                    a2 += ws[k] * math.sqrt(e1)
                    if a1 <= 0.0 or a2 <= 0.0:
                        continue
                    c = 2.0 * math.log(2.0 * a1 / a2)
                else:
                    bb += ws[k] * rel * e1
                    if a1 == 0.0:
                        continue
                    c = 1.0 + bb / a1
                upper = ts[k + 1] - ts[0] if k + 1 < n else math.inf
                if c > rel and c <= upper:
                    c += ts[0]
                    if lo <= c <= hi:
                        best = max(best, _voltage_at(c, ts, ws, n, double))
            z_out[b, q] = best


def voltage_maxima(t_in, weights, lo, hi, double):
    """Maximum over [lo, hi] of the unnormalised free voltage, shape (B, Q)."""
    B, P, Q = t_in.shape
    z = np.empty((B, Q))
    _vmax(np.ascontiguousarray(np.swapaxes(t_in, 1, 2)), np.ascontiguousarray(weights.T),
          float(lo), float(hi), bool(double), z)
    return z
