"""Scalar special functions used by the closed-form spike-time solutions.

Both functions accept Python floats or numpy arrays and return the same
kind of object.
"""

import numpy as np
from scipy.special import expit

INV_E = np.exp(-1.0)
BRANCH_POINT = -INV_E

# Arguments this close below the branch point are treated as the branch point
# itself; they arise from rounding in tangency configurations.
_BRANCH_SLACK = 4e-16


class LambertDomainError(ValueError):
    """Raised when the principal Lambert W branch is evaluated below -1/e."""


def _initial_guess(z):
    w = np.empty_like(z)

    near = z < -0.25
    p = np.sqrt(np.maximum(2.0 * (np.e * z[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3

    mid = (~near) & (z <= 3.0)
    # Pade-type approximation, good to ~1e-2 on [-0.25, 3]
    zm = z[mid]
    w[mid] = zm * (1.0 + 4.0 / 3.0 * zm) / (1.0 + 7.0 / 3.0 * zm + 5.0 / 6.0 * zm * zm)

    far = z > 3.0
    l1 = np.log(z[far])
    l2 = np.log(l1)
    w[far] = l1 - l2 + l2 / l1
    return w


def lambert_w0(z):
    """Principal branch of the Lambert W function, W0(z) for z >= -1/e.

    Solves ``w * exp(w) = z`` with a series/asymptotic starting guess that is
    refined by Halley iteration.

    Raises
    ------
    LambertDomainError
        If any argument lies below the branch point -1/e.
    """
    scalar = np.ndim(z) == 0
    z = np.array(z, dtype=float, ndmin=1)
    if np.any(np.isnan(z)):
        raise LambertDomainError("lambert_w0 received NaN")
    if np.any(z < BRANCH_POINT - _BRANCH_SLACK):
        raise LambertDomainError(f"lambert_w0 undefined below -1/e, got min {z.min()!r}")
    z = np.maximum(z, BRANCH_POINT)

    w = _initial_guess(z)
    at_branch = z == BRANCH_POINT
    w[at_branch] = -1.0
    active = ~at_branch & (z != 0.0)
    w[z == 0.0] = 0.0

    for _ in range(50):
        if not active.any():
            break
        wa = w[active]
        za = z[active]
        ew = np.exp(wa)
        f = wa * ew - za
        wp1 = wa + 1.0
        # wp1 never vanishes here: exact branch points were removed above
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        step = f / denom
        wa = wa - step
        w[active] = wa
        done = np.abs(step) <= 2e-16 * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[done]] = False

    return float(w[0]) if scalar else w


def logistic(x):
    """Logistic sigmoid 1 / (1 + exp(-x)) (``scipy.special.expit``)."""
    out = expit(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def logistic_grad(x):
    """Derivative of :func:`logistic`, sigma(x) * (1 - sigma(x))."""
    s = logistic(x)
    return s * (1.0 - s)
