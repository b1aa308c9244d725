"""Event-based exact gradients for leaky integrate-and-fire networks with delays."""

from .data import EncodingConfig, encode, generate, make_splits
from .estimator import DelGradClassifier, YinYangEncoder
from .graph import DelayKind, Network, build_network
from .hwmodel import NoiseModel, fit_delay_curve, parrot_weight_of_delay
from .lif import NeuronConfig, TauRatio, WeightedInputs, first_spike, solve_layer
from .losses import LossConfig, delta_mse, vmax_loss
from .multispike import spike_train

__version__ = "0.1.0"

__all__ = [
    "DelGradClassifier", "DelayKind", "EncodingConfig", "LossConfig", "Network", "NeuronConfig",
    "NoiseModel", "TauRatio", "WeightedInputs", "YinYangEncoder", "build_network", "delta_mse",
    "encode", "first_spike", "fit_delay_curve", "generate", "make_splits",
    "parrot_weight_of_delay", "solve_layer", "spike_train", "vmax_loss",
]
