import numpy as np
import pytest

from delgrad.graph import DelayKind, DelayLayer, Network, build_network
from delgrad.lif import NeuronConfig, TauRatio
from delgrad.losses import LossConfig, delta_mse
from delgrad.oracle import central_difference, relative_error, simulate_network

KINDS = ["none", "axonal", "dendritic", "synaptic"]
REGIMES = {
    "double": NeuronConfig(TauRatio.DOUBLE, 0.5, 1.0),
    "equal": NeuronConfig(TauRatio.EQUAL, 1.0, 2.6),
}


def small_net(kind, cfg, seed=0, sizes=(4, 6, 3)):
    d = cfg.drive
    return build_network(list(sizes), kind, cfg, weight_init=((2.0 * d, 1.0 * d), (2.5 * d, d)),
                         delay_init=(0.0, 1.0), rng=seed)


class TestDelayLayer:
    @pytest.mark.parametrize("kind,shape", [("none", (0,)), ("axonal", (5,)),
                                            ("dendritic", (3,)), ("synaptic", (5, 3))])
    def test_parameter_shapes(self, kind, shape):
        dl = DelayLayer(kind, 5, 3)
        assert dl.theta.shape == shape
        assert np.broadcast_shapes(dl.delays().shape, (5, 3)) == (5, 3)

    def test_broadcast_alias(self):
        assert DelayKind.parse("broadcast") is DelayKind.NONE
        with pytest.raises(ValueError):
            DelayKind.parse("radial")

    def test_delays_bounded(self):
        rng = np.random.default_rng(0)
        dl = DelayLayer("synaptic", 4, 3, theta=rng.normal(0, 10, (4, 3)), scale=1.5, shift=2.0)
        d = dl.delays()
        assert np.all(d > 2.0) and np.all(d < 3.5)

    def test_source_map_ties_channels(self):
        smap = np.repeat(np.arange(2), 3)
        dl = DelayLayer("axonal", 6, 4, theta=np.array([-1.0, 2.0]), source_map=smap)
        d = dl.delays()[:, 0]
        np.testing.assert_array_equal(d[:3], d[0])
        np.testing.assert_array_equal(d[3:], d[3])
        g = np.ones((2, 6, 4))
        _, g_theta = dl.backward(g)
        assert g_theta.shape == (2,)
        # each shared parameter collects 3 channels x 4 targets x 2 samples
        s = 1 / (1 + np.exp(-dl.theta))
        np.testing.assert_allclose(g_theta, 24 * s * (1 - s))

    def test_bad_source_map(self):
        with pytest.raises(ValueError):
            DelayLayer("axonal", 6, 4, source_map=np.arange(5))


@pytest.mark.parametrize("regime", list(REGIMES))
@pytest.mark.parametrize("kind", KINDS)
class TestNetwork:
    def test_forward_matches_integrator(self, regime, kind):
        cfg = REGIMES[regime]
        net = small_net(kind, cfg, seed=1)
        x = np.random.default_rng(2).uniform(0, 2, (6, 4))
        out = net.forward(x).outputs
        assert np.isfinite(out).mean() > 0.5
        layers = [(dl.delays(), nl.weights) for dl, nl in zip(net.delay_layers, net.neuron_layers)]
        for b in range(len(x)):
            ref = simulate_network(x[b], layers, cfg, dt=1e-4)[-1]
            np.testing.assert_array_equal(np.isinf(out[b]), np.isinf(ref))
            fin = np.isfinite(ref)
            np.testing.assert_allclose(out[b][fin], ref[fin], atol=1e-5)

    def test_backward_matches_fd(self, regime, kind):
        cfg = REGIMES[regime]
        lcfg = LossConfig(silent_time=6.0)
        net = small_net(kind, cfg, seed=3)
        rng = np.random.default_rng(4)
        x = rng.uniform(0, 2, (3, 4))
        y = rng.integers(0, 3, 3)

        def loss():
            return float(delta_mse(net.forward(x).outputs, y, lcfg)[0].mean())

        tape = net.forward(x)
        _, g = delta_mse(tape.outputs, y, lcfg)
        grads = net.backward(tape, g / len(y))
        for p, ga in zip(net.parameters(), grads):
            if p.size == 0:
                continue

            def f(v, p=p):
                old = p.copy()
                p[...] = v
                out = loss()
                p[...] = old
                return out

            num = central_difference(f, p.copy())
            assert relative_error(ga, num, 1e-3 * max(1.0, loss())).max() < 1e-5


def test_axonal_equals_dendritic_on_next_layer():
    """Delaying a hidden neuron's output equals delaying all of its inputs."""
    cfg = REGIMES["double"]
    rng = np.random.default_rng(5)
    theta = rng.normal(0, 1, 6)
    w1, w2 = rng.normal(2.0, 1.0, (4, 6)), rng.normal(2.5, 0.5, (6, 3))
    x = rng.uniform(0, 2, (50, 4))

    a = build_network([4, 6, 3], ["none", "axonal"], cfg, rng=0)
    a.neuron_layers[0].weights[...] = w1
    a.neuron_layers[1].weights[...] = w2
    a.delay_layers[1].theta[...] = theta

    d = build_network([4, 6, 3], ["dendritic", "none"], cfg, rng=0)
    d.neuron_layers[0].weights[...] = w1
    d.neuron_layers[1].weights[...] = w2
    d.delay_layers[0].theta[...] = theta

    ta, td = a.forward(x).outputs, d.forward(x).outputs
    np.testing.assert_array_equal(np.isinf(ta), np.isinf(td))
    np.testing.assert_allclose(ta[np.isfinite(ta)], td[np.isfinite(td)], rtol=1e-12)


def test_serialisation_round_trip(tmp_path):
    net = small_net("synaptic", REGIMES["equal"], seed=7)
    path = tmp_path / "net.json"
    net.save(path)
    back = Network.load(path)
    x = np.random.default_rng(0).uniform(0, 2, (10, 4))
    np.testing.assert_array_equal(net.forward(x).outputs, back.forward(x).outputs)
    assert back.n_params() == net.n_params()


def test_parameter_counts():
    cfg = REGIMES["double"]
    # weight-only 4-H-3 has 7H weights; synaptic delays double that
    for h in (5, 10, 30):
        assert build_network([4, h, 3], "none", cfg, rng=0).n_params() == 7 * h
        assert build_network([4, h, 3], "synaptic", cfg, rng=0).n_params() == 14 * h
        assert build_network([4, h, 3], "axonal", cfg, rng=0).n_params() == 7 * h + 4 + h
        assert build_network([4, h, 3], "dendritic", cfg, rng=0).n_params() == 7 * h + h + 3


def test_quantizer_applies_in_forward():
    cfg = REGIMES["double"]
    net = small_net("none", cfg)
    x = np.random.default_rng(0).uniform(0, 2, (5, 4))
    plain = net.forward(x).outputs
    net.quantizer = lambda w: (np.zeros_like(w), np.ones_like(w, dtype=bool))
    assert np.all(np.isinf(net.forward(x).outputs))
    net.quantizer = None
    np.testing.assert_array_equal(net.forward(x).outputs, plain)
