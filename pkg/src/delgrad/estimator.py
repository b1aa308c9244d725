"""scikit-learn style wrappers: a spike-time encoder and a trainable classifier."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted

from .config import lr_for_kinds
from .data import EncodingConfig, encode
from .graph import DelayKind, build_network
from .hwmodel import NoiseModel, NoiseSampler, make_quantizer, multiplex_inputs
from .lif import NeuronConfig
from .losses import LossConfig, default_silent_time, ttfs_decode
from .train import NoiseHooks, TrainConfig, evaluate, train


def noise_model_from_block(nz, hidden=()):
    """:class:`NoiseModel` of a config noise block, ``None`` when disabled."""
    if not nz.enabled:
        return None
    noise = NoiseModel(quantize=nz.quantize, quant_max=nz.quant_max, quant_step=nz.quant_step,
                       fixed_pattern=nz.fixed_pattern, fp_mean=nz.fp_mean, fp_std=nz.fp_std,
                       trial_to_trial=nz.trial_to_trial, t2t_std=nz.t2t_std, jitter=nz.jitter,
                       delay_jitter_std=nz.delay_jitter_std, multiplex=nz.multiplex,
                       offset_units=nz.offset_units)
    if hidden and min(hidden) == 5:
        # the smallest hardware networks need a wider weight range to fire reliably
        noise.weight_range_factor = nz.hidden5_range_factor
    return noise


class YinYangEncoder(TransformerMixin, BaseEstimator):
    """Map (x, y) coordinates in [0, 1] to four input spike times."""

    def __init__(self, t_early=0.15, t_late=2.0):
        self.t_early = t_early
        self.t_late = t_late

    def fit(self, X, y=None):
        EncodingConfig(self.t_early, self.t_late)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        return encode(np.asarray(X, dtype=float), EncodingConfig(self.t_early, self.t_late))


class DelGradClassifier(ClassifierMixin, BaseEstimator):
    """Time-to-first-spike classifier with trainable weights and delays.

    The network has ``len(hidden) + 1`` neuron layers, each preceded by a
    delay layer of kind ``delay_kind`` (``"none"`` gives a weight-only
    network).  Inputs are spike times, one column per input neuron; the
    predicted class is the output neuron that fires first.

    ``noise`` (a :class:`~delgrad.hwmodel.NoiseModel`) switches on the
    hardware-aware perturbations, applied in training and prediction.
    """

    def __init__(self, hidden=(30,), delay_kind="axonal", tau_ratio="double", g_leak=0.5,
                 threshold=1.0, delay_init_mean=0.0, delay_init_std=0.25, delay_scale=1.0,
                 delay_shift=0.0, weight_init=((1.0, 1.0), (1.0, 1.0)),
                 max_silent_ratio=(0.3, 0.0), train_delays=True, epochs=300, batch_size=150,
                 lr_weights=5e-3, lr_delays=5e-3, scheduler_step=20, scheduler_gamma=0.95,
                 max_dw=0.2, bump_value=5e-4, delta_t=0.2, silent_time=None, t_late=2.0,
                 noise=None, random_state=0):
        self.hidden = hidden
        self.delay_kind = delay_kind
        self.tau_ratio = tau_ratio
        self.g_leak = g_leak
        self.threshold = threshold
        self.delay_init_mean = delay_init_mean
        self.delay_init_std = delay_init_std
        self.delay_scale = delay_scale
        self.delay_shift = delay_shift
        self.weight_init = weight_init
        self.max_silent_ratio = max_silent_ratio
        self.train_delays = train_delays
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_weights = lr_weights
        self.lr_delays = lr_delays
        self.scheduler_step = scheduler_step
        self.scheduler_gamma = scheduler_gamma
        self.max_dw = max_dw
        self.bump_value = bump_value
        self.delta_t = delta_t
        self.silent_time = silent_time
        self.t_late = t_late
        self.noise = noise
        self.random_state = random_state

    @classmethod
    def from_config(cls, cfg, **overrides):
        """Classifier parameters from an :class:`~delgrad.config.ExperimentConfig`."""
        net, tr = cfg.network, cfg.training
        noise = noise_model_from_block(cfg.noise, net.hidden)
        params = dict(
            hidden=tuple(net.hidden), delay_kind=tuple(net.delay_kind),
            tau_ratio=cfg.neuron.tau_ratio, g_leak=cfg.neuron.g_leak,
            threshold=cfg.neuron.threshold, delay_init_mean=net.delay_init_mean,
            delay_init_std=net.delay_init_std, delay_scale=net.delay_scale,
            delay_shift=net.delay_shift, weight_init=tuple(map(tuple, net.weight_init)),
            max_silent_ratio=tuple(net.max_silent_ratio), train_delays=net.train_delays,
            epochs=tr.epochs, batch_size=tr.batch_size, lr_weights=tr.lr_weights,
            lr_delays=tr.lr_delays, scheduler_step=tr.scheduler_step,
            scheduler_gamma=tr.scheduler_gamma, max_dw=tr.max_dw, bump_value=tr.bump_value,
            delta_t=cfg.loss.delta_t, silent_time=cfg.loss.silent_time,
            t_late=cfg.encoding.t_late, noise=noise, random_state=cfg.seed)
        kinds = overrides.get("delay_kind", net.delay_kind)
        lr = lr_for_kinds(tr, [kinds] if isinstance(kinds, str) else kinds)
        if lr is not None:
            params.update(lr_weights=lr, lr_delays=lr)
        params.update(overrides)
        return cls(**params)

    # -- construction ---------------------------------------------------------

    def _neuron_cfg(self):
        return NeuronConfig(tau_ratio=self.tau_ratio, g_leak=self.g_leak, threshold=self.threshold)

    def _kinds(self):
        kinds = [self.delay_kind] if isinstance(self.delay_kind, (str, DelayKind)) else \
            list(self.delay_kind)
        return [DelayKind.parse(k) for k in kinds]

    def _prepare(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-D array of input spike times")
        if self.noise is not None and self.noise.multiplex > 1:
            X, _ = multiplex_inputs(X, self.noise)
        return X

    def _build(self, n_features, n_classes):
        rng = np.random.default_rng([int(self.random_state), 0xB1])
        m = 1 if self.noise is None else int(self.noise.multiplex)
        smap = np.repeat(np.arange(n_features), m) if m > 1 else None
        sizes = [n_features * m, *self.hidden, n_classes]
        net = build_network(sizes, self._kinds(), self._neuron_cfg(),
                            weight_init=self.weight_init,
                            delay_init=(self.delay_init_mean, self.delay_init_std),
                            scale=self.delay_scale, shift=self.delay_shift,
                            max_silent_ratio=self.max_silent_ratio, rng=rng, source_map=smap,
                            train_delays=self.train_delays)
        if self.noise is not None and self.noise.quantize:
            net.quantizer = make_quantizer(self.noise)
        return net

    def _loss_cfg(self):
        st = self.silent_time
        if st is None:
            st = default_silent_time(self.t_late, self.network_.max_total_delay())
        return LossConfig(delta_t=self.delta_t, silent_time=st, t_late=self.t_late)

    def _hooks(self):
        if self.noise is None or not self.noise.any_active:
            return NoiseHooks()
        return NoiseHooks(NoiseSampler(self.network_, self.noise, self.random_state))

    # -- estimator API ----------------------------------------------------------

    def fit(self, X, y, eval_set=None, epoch_callback=None, resume=None):
        """Train on spike-time inputs ``X`` (n_samples, n_inputs) and labels ``y``.

        ``eval_set=(X_val, y_val)`` is evaluated after every epoch and logged.
        ``resume`` is a checkpoint document; training continues from it up
        to ``epochs``.
        """
        y = np.asarray(y)
        self.classes_ = unique_labels(y)
        self.n_features_in_ = np.asarray(X).shape[1]
        yi = np.searchsorted(self.classes_, y)
        Xp = self._prepare(X)
        self.network_ = self._build(self.n_features_in_, len(self.classes_))
        self.loss_config_ = self._loss_cfg()
        self.hooks_ = self._hooks()
        val = None
        if eval_set is not None:
            Xv, yv = eval_set
            val = (self._prepare(Xv), np.searchsorted(self.classes_, np.asarray(yv)))
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          lr_weights=self.lr_weights, lr_delays=self.lr_delays,
                          scheduler_step=self.scheduler_step,
                          scheduler_gamma=self.scheduler_gamma, max_dw=self.max_dw,
                          bump_value=self.bump_value, seed=int(self.random_state))
        self.train_config_ = cfg
        result = train(self.network_, (Xp, yi), val, cfg, self.loss_config_, self.hooks_,
                       resume=resume, epoch_callback=epoch_callback)
        self.result_ = result
        self.log_ = result.log
        self.optimizer_ = result.optimizer
        return self

    def predict_times(self, X, key=(1 << 30,)):
        """Output spike times (``inf`` for silent output neurons)."""
        check_is_fitted(self, "network_")
        Xp = self._prepare(X)
        out = []
        for c, start in enumerate(range(0, len(Xp), self.batch_size)):
            xb = Xp[start:start + self.batch_size]
            thr, jit = self.hooks_.draw(self.network_, len(xb), (*key, c))
            out.append(self.network_.forward(xb, thresholds=thr, jitter=jit).outputs)
        return np.concatenate(out) if out else np.empty((0, self.network_.n_outputs))

    def predict(self, X):
        return self.classes_[ttfs_decode(self.predict_times(X))]

    def error_rate(self, X, y, key=(1 << 30,)):
        """Fraction of misclassified samples, evaluated batch by batch under noise."""
        check_is_fitted(self, "network_")
        yi = np.searchsorted(self.classes_, np.asarray(y))
        return evaluate(self.network_, self._prepare(X), yi, self.loss_config_, self.hooks_,
                        key=key, chunk=self.batch_size)[0]

    @property
    def n_params_(self):
        check_is_fitted(self, "network_")
        return self.network_.n_params()
