"""Hardware-aware perturbations and parrot-neuron delay calibration.

The noise sources model a mixed-signal substrate on top of the exact
simulator: weight quantisation (trained with a straight-through estimator),
per-neuron threshold offsets that are either frozen for a run or redrawn for
every batch, Gaussian jitter on delayed spikes, and channel multiplexing of
the inputs.  Each source can be switched on independently; with everything
off the simulator is untouched.
"""

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.optimize import curve_fit, minimize_scalar

from .graph import DelayKind

LADDER = ("ideal", "hw_params", "quant", "fp", "t2t", "jitter")


@dataclass
class NoiseModel:
    quantize: bool = False
    quant_max: float = 2.1
    quant_step: float = 1.0 / 30.0
    fixed_pattern: bool = False
    fp_mean: float = 0.13
    fp_std: float = 0.08
    trial_to_trial: bool = False
    t2t_std: float = 0.04
    jitter: bool = False
    delay_jitter_std: float = 0.01
    multiplex: int = 1
    # offsets are multiples of the nominal threshold ("relative") or voltages
    offset_units: str = "relative"
    weight_range_factor: float = 1.0

    def __post_init__(self):
        for name in ("fp_std", "t2t_std", "delay_jitter_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.quant_step > 0 or not self.quant_max > 0:
            raise ValueError("quantisation step and range must be positive")
        if int(self.multiplex) < 1:
            raise ValueError("multiplex must be at least 1")
        if self.offset_units not in ("relative", "absolute"):
            raise ValueError("offset_units must be 'relative' or 'absolute'")

    @property
    def any_active(self):
        return self.quantize or self.fixed_pattern or self.trial_to_trial or self.jitter

    @property
    def weight_max(self):
        return self.quant_max * self.weight_range_factor

    @classmethod
    def rung(cls, name, **overrides):
        """Noise settings of one step of the ablation ladder (cumulative)."""
        if name not in LADDER:
            raise ValueError(f"unknown ladder rung {name!r}; expected one of {LADDER}")
        k = LADDER.index(name)
        base = cls(multiplex=1 if k == 0 else 5, quantize=k >= 2, fixed_pattern=k >= 3,
                   trial_to_trial=k >= 4, jitter=k >= 5)
        return replace(base, **overrides)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def quantize_weights(w, model):
    """Clamp to ``[-max, max]`` and round to the nearest multiple of the step."""
    wmax = model.weight_max
    return np.round(np.clip(w, -wmax, wmax) / model.quant_step) * model.quant_step


def make_quantizer(model):
    """Forward map ``w -> (w_q, mask)`` where ``mask`` is the straight-through gate."""
    wmax = model.weight_max

    def quantizer(w):
        return quantize_weights(w, model), (np.abs(w) <= wmax).astype(float)

    return quantizer


def _scale(model, thresholds):
    return thresholds if model.offset_units == "relative" else 1.0


def apply_fixed_pattern(network, seed, model):
    """Frozen per-neuron threshold offsets, one array per neuron layer."""
    rng = np.random.default_rng([int(seed), 0xF1])
    out = []
    for nl in network.neuron_layers:
        off = rng.normal(model.fp_mean, model.fp_std, nl.n_post)
        out.append(off * _scale(model, nl.cfg.threshold))
    return out


def apply_trial_to_trial(network, batch_seed, model):
    """Per-neuron offsets redrawn for every batch (``batch_seed`` is a sequence or int)."""
    key = list(np.atleast_1d(batch_seed).astype(np.int64))
    rng = np.random.default_rng(key + [0x77])
    return [rng.normal(0.0, model.t2t_std, nl.n_post) * _scale(model, nl.cfg.threshold)
            for nl in network.neuron_layers]


def apply_delay_jitter(network, batch_size, sample_seed, model):
    """Gaussian jitter on every delayed spike; ``None`` for layers without delays."""
    key = list(np.atleast_1d(sample_seed).astype(np.int64))
    rng = np.random.default_rng(key + [0x1D])
    out = []
    for dl in network.delay_layers:
        if dl.kind is DelayKind.NONE:
            out.append(None)
            continue
        shape = (batch_size, dl.n_pre, 1) if dl.kind is DelayKind.AXONAL else \
            (batch_size, dl.n_pre, dl.n_post)
        out.append(rng.normal(0.0, model.delay_jitter_std, shape))
    return out


class NoiseSampler:
    """Draws the perturbations for each forward pass of one training run."""

    def __init__(self, network, model, seed):
        self.model = model
        self.seed = int(seed)
        self.nominal = [nl.cfg.threshold for nl in network.neuron_layers]
        self.fixed = apply_fixed_pattern(network, seed, model) if model.fixed_pattern else None

    def draw(self, network, batch_size, key):
        """Return ``(thresholds, jitter)`` for ``Network.forward``."""
        m = self.model
        thresholds = None
        if self.fixed is not None or m.trial_to_trial:
            thresholds = []
            t2t = apply_trial_to_trial(network, [self.seed, *key], m) if m.trial_to_trial else None
            for k, nom in enumerate(self.nominal):
                thr = np.full(network.neuron_layers[k].n_post, nom, dtype=float)
                if self.fixed is not None:
                    thr = thr + self.fixed[k]
                if t2t is not None:
                    thr = thr + t2t[k]
                thresholds.append(thr)
        jitter = apply_delay_jitter(network, batch_size, [self.seed, *key], m) if m.jitter else None
        return thresholds, jitter


def multiplex_inputs(x, model_or_factor):
    """Repeat every input feature over ``multiplex`` adjacent channels.

    Returns ``(x_expanded, source_map)``; ``source_map`` maps each channel to
    its original feature, which is how copies share one delay parameter.
    """
    m = model_or_factor if isinstance(model_or_factor, int) else model_or_factor.multiplex
    x = np.asarray(x, dtype=float)
    n_feat = x.shape[-1]
    return np.repeat(x, m, axis=-1), np.repeat(np.arange(n_feat), m)


# -- parrot neuron calibration -------------------------------------------------


@dataclass(frozen=True)
class ParrotConfig:
    tau_s: float = 1.0
    tau_m: float = 1.0
    g_leak: float = 1.0
    threshold: float = 1.0

    def __post_init__(self):
        if min(self.tau_s, self.tau_m, self.g_leak, self.threshold) <= 0:
            raise ValueError("parrot constants must be positive")

    @classmethod
    def from_neuron(cls, cfg):
        return cls(cfg.tau_s, cfg.tau_m, cfg.g_leak, cfg.threshold)

    @property
    def equal(self):
        return np.isclose(self.tau_m, self.tau_s, rtol=1e-12, atol=0)

    @property
    def t_peak(self):
        """Time of the PSP maximum, the longest delay a single input can realise."""
        if self.equal:
            return self.tau_s
        tm, ts = self.tau_m, self.tau_s
        return tm * ts / (tm - ts) * np.log(tm / ts)

    def kernel(self, d):
        tm, ts = self.tau_m, self.tau_s
        if self.equal:
            return d / ts * np.exp(-d / ts)
        return ts / (tm - ts) * (np.exp(-d / tm) - np.exp(-d / ts))


class InfeasibleDelayError(ValueError):
    pass


def parrot_weight_of_delay(d, cfg=ParrotConfig()):
    """Weight making a single-input parrot neuron fire exactly ``d`` after its input."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0) or np.any(d_arr > cfg.t_peak * (1 + 1e-12)):
        raise InfeasibleDelayError(f"delay must lie in (0, {cfg.t_peak!r}]")
    w = cfg.g_leak * cfg.threshold / cfg.kernel(d_arr)
    return float(w) if w.ndim == 0 else w


class DegenerateFitError(ValueError):
    pass


@dataclass
class DelayCurve:
    alpha: float
    beta: float
    gamma: float
    delta: float
    residual: float

    def __call__(self, w):
        return self.alpha + self.beta * np.exp(self.gamma * (np.asarray(w, dtype=float) + self.delta))

    def inverse(self, d):
        return np.log((np.asarray(d, dtype=float) - self.alpha) / self.beta) / self.gamma - self.delta


def fit_delay_curve(w, d, delta=0.0):
    """Least-squares fit of ``d(w) = alpha + beta * exp(gamma * (w + delta))``.

    ``beta`` and ``delta`` are not separately identifiable, so ``delta`` is
    held at the given value.  ``gamma`` is located by a bounded scan of the
    variable-projection residual and then refined jointly with ``curve_fit``.
    """
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    if w.shape != d.shape or w.size < 4:
        raise ValueError("need at least four (weight, delay) pairs")
    if np.unique(w).size != w.size:
        raise ValueError("weights must be distinct")
    if np.ptp(d) <= 1e-12 * max(1.0, np.abs(d).max()):
        raise DegenerateFitError("delays are constant; the exponential is not determined")

    wc = w + delta
    span = np.ptp(w)

    def linear(gamma):
        A = np.stack([np.ones_like(wc), np.exp(gamma * (wc - wc.mean()))], axis=1)
        coef, *_ = np.linalg.lstsq(A, d, rcond=None)
        return coef, float(np.sum((A @ coef - d) ** 2))

    grid = np.concatenate([-np.logspace(-3, 2, 60), np.logspace(-3, 2, 60)]) / span
    scores = [linear(g)[1] for g in grid]
    k = int(np.argmin(scores))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    lo, hi = min(lo, hi), max(lo, hi)
    g0 = minimize_scalar(lambda g: linear(g)[1], bounds=(lo, hi), method="bounded",
                         options={"xatol": 1e-14}).x if hi > lo else grid[k]
    (a0, b0), _ = linear(g0)
    b0 = b0 * np.exp(-g0 * wc.mean())

    def model(x, a, b, g):
        return a + b * np.exp(g * x)

    try:
        popt, _ = curve_fit(model, wc, d, p0=(a0, b0, g0), xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            maxfev=20000)
    except RuntimeError as exc:
        raise DegenerateFitError(f"fit did not converge from start {(a0, b0, g0)}: {exc}") from exc
    a, b, g = popt
    res = float(np.sqrt(np.mean((model(wc, *popt) - d) ** 2)))
    if not np.all(np.isfinite(popt)):
        raise DegenerateFitError(f"non-finite fit parameters, residual trace {res}")
    return DelayCurve(float(a), float(b), float(g), float(delta), res)
