"""Layer stack of delay and neuron layers with exact reverse accumulation.

A network alternates :class:`DelayLayer` and :class:`NeuronLayer`.  The
forward pass only moves spike times between layers and records, per
sample, the causal sets and local derivatives of every emitted spike in a
:class:`Tape`.  :meth:`Network.backward` replays the tape to obtain the
gradients of a loss with respect to all weights and delay parameters.
"""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .lif import NeuronConfig, TauRatio, solve_layer
from .special import logistic

FORMAT_VERSION = 1


class DelayKind(str, Enum):
    NONE = "none"
    AXONAL = "axonal"
    DENDRITIC = "dendritic"
    SYNAPTIC = "synaptic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        value = str(value).lower()
        if value == "broadcast":
            return cls.NONE
        return cls(value)


@dataclass
class DelayLayer:
    """Additive transmission delays ``d = shift + scale * logistic(theta)``.

    ``source_map`` ties several presynaptic channels to one delay parameter
    (used for channel multiplexing); it maps channel index to theta row.
    """

    kind: DelayKind
    n_pre: int
    n_post: int
    theta: np.ndarray = None
    scale: float = 1.0
    shift: float = 0.0
    source_map: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        self.kind = DelayKind.parse(self.kind)
        if self.source_map is not None:
            self.source_map = np.asarray(self.source_map, dtype=int)
            if self.source_map.shape != (self.n_pre,):
                raise ValueError("source_map must have one entry per presynaptic channel")
        shape = self.theta_shape
        if self.theta is None:
            self.theta = np.zeros(shape)
        self.theta = np.asarray(self.theta, dtype=float).reshape(shape)
        if self.kind is not DelayKind.NONE and not self.scale > 0:
            raise ValueError("delay scale must be positive")

    @property
    def n_src(self):
        return self.n_pre if self.source_map is None else int(self.source_map.max()) + 1

    @property
    def theta_shape(self):
        return {
            DelayKind.NONE: (0,),
            DelayKind.AXONAL: (self.n_src,),
            DelayKind.DENDRITIC: (self.n_post,),
            DelayKind.SYNAPTIC: (self.n_src, self.n_post),
        }[self.kind]

    @property
    def n_params(self):
        return int(np.prod(self.theta_shape)) if self.kind is not DelayKind.NONE else 0

    def _expand(self, arr):
        if self.source_map is None or self.kind is DelayKind.DENDRITIC:
            return arr
        return arr[self.source_map]

    def delays(self):
        """Effective delays, broadcastable to (P, Q)."""
        if self.kind is DelayKind.NONE:
            return np.zeros((1, 1))
        d = self._expand(self.shift + self.scale * logistic(self.theta))
        if self.kind is DelayKind.AXONAL:
            return d[:, None]
        if self.kind is DelayKind.DENDRITIC:
            return d[None, :]
        return d

    def forward(self, t_pre, jitter=None):
        """Arrival times (B, P, Q) or broadcastable, for presynaptic times (B, P)."""
        t_eff = t_pre[:, :, None] + self.delays()[None]
        if jitter is not None:
            t_eff = t_eff + jitter
        return t_eff

    def backward(self, g_eff):
        """Return (dL/dt_pre, dL/dtheta) from dL/dt_eff of shape (B, P, Q)."""
        g_pre = g_eff.sum(axis=2)
        if self.kind is DelayKind.NONE:
            return g_pre, np.zeros(0)
        dd = self.scale * logistic(self.theta) * (1.0 - logistic(self.theta))
        if self.kind is DelayKind.AXONAL:
            g_d = g_eff.sum(axis=(0, 2))
        elif self.kind is DelayKind.DENDRITIC:
            return g_pre, g_eff.sum(axis=(0, 1)) * dd
        else:
            g_d = g_eff.sum(axis=0)
        if self.source_map is not None:
            pooled = np.zeros(self.theta_shape)
            np.add.at(pooled, self.source_map, g_d)
            g_d = pooled
        return g_pre, g_d * dd


@dataclass
class NeuronLayer:
    weights: np.ndarray
    cfg: NeuronConfig = field(default_factory=NeuronConfig)
    max_silent_ratio: float = 0.0
    trainable: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (pre, post) matrix")

    @property
    def n_pre(self):
        return self.weights.shape[0]

    @property
    def n_post(self):
        return self.weights.shape[1]

    @property
    def n_params(self):
        return self.weights.size


@dataclass
class LayerRecord:
    t_in: np.ndarray
    t_out: np.ndarray
    dT_dw: np.ndarray
    dT_dt: np.ndarray
    ste_mask: np.ndarray = None


@dataclass
class Tape:
    """Per-sample forward record (batched along axis 0 of every array)."""

    batch_size: int
    records: list

    @property
    def outputs(self):
        return self.records[-1].t_out

    def layer_outputs(self):
        return [r.t_out for r in self.records]


class Network:
    """Feed-forward stack ``[Delay, Neuron, Delay, Neuron, ...]``.

    ``quantizer``, when set, maps a weight matrix to ``(w_used, ste_mask)``;
    the forward pass uses ``w_used`` and weight gradients are multiplied by
    the mask (straight-through estimator).
    """

    def __init__(self, layers, quantizer=None):
        self.layers = list(layers)
        self.quantizer = quantizer
        if len(self.layers) % 2 or not self.layers:
            raise ValueError("a network is a non-empty sequence of (delay, neuron) pairs")
        for k in range(0, len(self.layers), 2):
            dl, nl = self.layers[k], self.layers[k + 1]
            if not isinstance(dl, DelayLayer) or not isinstance(nl, NeuronLayer):
                raise ValueError("layers must alternate DelayLayer, NeuronLayer")
            if dl.n_pre != nl.n_pre or dl.n_post != nl.n_post:
                raise ValueError(f"delay layer {k} does not match neuron layer {k + 1}")
            if k and self.layers[k - 1].n_post != nl.n_pre:
                raise ValueError(f"size mismatch before layer {k}")

    @property
    def delay_layers(self):
        return self.layers[0::2]

    @property
    def neuron_layers(self):
        return self.layers[1::2]

    @property
    def n_inputs(self):
        return self.layers[1].n_pre

    @property
    def n_outputs(self):
        return self.layers[-1].n_post

    def n_params(self):
        """Distinct trainable-in-principle parameters: weights plus delays."""
        return int(sum(layer.n_params for layer in self.layers))

    def max_total_delay(self):
        return float(sum(dl.shift + dl.scale for dl in self.delay_layers
                         if dl.kind is not DelayKind.NONE))

    def forward(self, x, thresholds=None, jitter=None, voltage_readout=False):
        """Propagate input spike times ``x`` (B, n_inputs) through the stack.

        ``thresholds`` and ``jitter`` are optional per-neuron-layer and
        per-delay-layer lists of perturbations.  With ``voltage_readout`` the
        last neuron layer is not solved; its arrival times and weights are
        left on the tape for a voltage-based loss.
        """
        t = np.asarray(x, dtype=float)
        if t.ndim != 2 or t.shape[1] != self.n_inputs:
            raise ValueError(f"expected input of shape (B, {self.n_inputs})")
        B = t.shape[0]
        records = []
        n_blocks = len(self.layers) // 2
        for blk in range(n_blocks):
            dl = self.layers[2 * blk]
            nl = self.layers[2 * blk + 1]
            jit = None if jitter is None else jitter[blk]
            t_eff = np.broadcast_to(dl.forward(t, jit), (B, nl.n_pre, nl.n_post))
            w, mask = nl.weights, None
            if self.quantizer is not None:
                w, mask = self.quantizer(nl.weights)
            if voltage_readout and blk == n_blocks - 1:
                records.append(LayerRecord(np.array(t_eff), None, None, None, mask))
                break
            thr = None if thresholds is None else thresholds[blk]
            T, dT_dw, dT_dt = solve_layer(np.ascontiguousarray(t_eff), w, nl.cfg, thr)
            records.append(LayerRecord(np.array(t_eff), T, dT_dw, dT_dt, mask))
            t = T
        return Tape(B, records)

    def effective_weights(self, blk):
        w = self.neuron_layers[blk].weights
        return w if self.quantizer is None else self.quantizer(w)[0]

    def backward(self, tape, grad_out=None, last_grads=None):
        """Reverse accumulation through the tape.

        Either ``grad_out`` (dL/dT of the last layer, shape (B, Q)) or
        ``last_grads = (dL/dW_last, dL/dt_in_last)`` for a voltage readout
        must be given.  Returns one array per layer: weight gradients for
        neuron layers, theta gradients for delay layers.
        """
        if len(tape.records) != len(self.layers) // 2:
            raise ValueError("tape does not belong to this network")
        grads = [None] * len(self.layers)
        g_t = grad_out
        for blk in reversed(range(len(tape.records))):
            rec = tape.records[blk]
            dl = self.layers[2 * blk]
            if blk == len(tape.records) - 1 and last_grads is not None:
                g_w, g_eff = last_grads
            else:
                if g_t is None:
                    raise ValueError("no upstream gradient")
                if g_t.shape != rec.t_out.shape:
                    raise ValueError("gradient does not match tape")
                g_w = np.einsum("bj,bij->ij", g_t, rec.dT_dw)
                g_eff = g_t[:, None, :] * rec.dT_dt
            if rec.ste_mask is not None:
                g_w = g_w * rec.ste_mask
            grads[2 * blk + 1] = g_w
            g_t, grads[2 * blk] = dl.backward(g_eff)
        return grads

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        return [layer.theta if isinstance(layer, DelayLayer) else layer.weights
                for layer in self.layers]

    def copy(self):
        return Network.from_dict(self.to_dict(), quantizer=self.quantizer)

    def to_dict(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, DelayLayer):
                out.append({
                    "type": "delay",
                    "kind": layer.kind.value,
                    "n_pre": layer.n_pre,
                    "n_post": layer.n_post,
                    "shape": list(layer.theta.shape),
                    "theta": layer.theta.tolist(),
                    "scale": layer.scale,
                    "shift": layer.shift,
                    "source_map": None if layer.source_map is None else layer.source_map.tolist(),
                    "trainable": layer.trainable,
                })
            else:
                c = layer.cfg
                out.append({
                    "type": "neuron",
                    "shape": list(layer.weights.shape),
                    "weights": layer.weights.tolist(),
                    "neuron": {"tau_ratio": c.tau_ratio.value, "g_leak": c.g_leak,
                               "threshold": c.threshold, "v_reset": c.v_reset,
                               "tau_ref": _enc_float(c.tau_ref)},
                    "max_silent_ratio": layer.max_silent_ratio,
                    "trainable": layer.trainable,
                })
        return {"format": "delgrad-network", "version": FORMAT_VERSION, "layers": out}

    @classmethod
    def from_dict(cls, doc, quantizer=None):
        if doc.get("format") != "delgrad-network":
            raise ValueError("not a delgrad network document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format version {doc.get('version')}")
        layers = []
        for item in doc["layers"]:
            if item["type"] == "delay":
                layers.append(DelayLayer(
                    item["kind"], item["n_pre"], item["n_post"],
                    np.array(item["theta"], dtype=float).reshape(item["shape"]),
                    item["scale"], item["shift"], item["source_map"], item["trainable"]))
            else:
                n = dict(item["neuron"])
                n["tau_ref"] = _dec_float(n["tau_ref"])
                layers.append(NeuronLayer(
                    np.array(item["weights"], dtype=float).reshape(item["shape"]),
                    NeuronConfig(**n), item["max_silent_ratio"], item["trainable"]))
        return cls(layers, quantizer=quantizer)

    def save(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path, quantizer=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), quantizer=quantizer)


def _enc_float(x):
    return "inf" if x == float("inf") else x


def _dec_float(x):
    return float("inf") if x == "inf" else float(x)


def build_network(sizes, delay_kinds, neuron_cfg=None, weight_init=((1.0, 1.0),),
                  delay_init=(0.0, 0.25), scale=1.0, shift=0.0, max_silent_ratio=(0.3, 0.0),
                  rng=None, source_map=None, train_delays=True):
    """Randomly initialised network for layer sizes ``[n_in, h1, ..., n_out]``.

    ``weight_init``, ``max_silent_ratio`` and ``delay_kinds`` are per neuron
    layer (the last entry is reused when too short).  Delay parameters are
    drawn as ``theta ~ N(mean, std)``.  ``source_map`` applies to the input
    delay layer only.
    """
    rng = np.random.default_rng(rng)
    cfg = neuron_cfg or NeuronConfig()
    if isinstance(delay_kinds, (str, DelayKind)):
        delay_kinds = [delay_kinds]

    def pick(seq, k):
        seq = list(seq)
        return seq[min(k, len(seq) - 1)]

    layers = []
    for k in range(len(sizes) - 1):
        P, Q = sizes[k], sizes[k + 1]
        smap = source_map if k == 0 else None
        dl = DelayLayer(pick(delay_kinds, k), P, Q, scale=scale, shift=shift, source_map=smap,
                        trainable=train_delays)
        if dl.kind is not DelayKind.NONE:
            dl.theta = rng.normal(delay_init[0], delay_init[1], dl.theta_shape)
        mean, std = pick(weight_init, k)
        w = rng.normal(mean, std, (P, Q))
        layers.append(dl)
        layers.append(NeuronLayer(w, cfg, float(pick(max_silent_ratio, k))))
    return Network(layers)


__all__ = ["DelayKind", "DelayLayer", "NeuronLayer", "Network", "Tape", "build_network",
           "TauRatio"]
