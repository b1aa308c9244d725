import json

import numpy as np
import pytest

from delgrad.data import encode, make_splits
from delgrad.graph import build_network
from delgrad.lif import NeuronConfig
from delgrad.losses import LossConfig
from delgrad.train import (MetricsLog, NumericalAbort, OptimizerState, TrainConfig, adam_step,
                           checkpoint, evaluate, silent_policy, train)

CFG = NeuronConfig()


@pytest.fixture(scope="module")
def data():
    s = make_splits(0, {"train": 300, "validation": 90, "test": 90})
    return {k: (encode(v.xy), v.labels) for k, v in s.items()}


def net(kind="axonal", seed=0):
    return build_network([4, 12, 3], kind, CFG, weight_init=((1.0, 1.0), (1.0, 1.0)),
                         delay_init=(0.0, 0.25), rng=seed)


def loss_cfg():
    return LossConfig(silent_time=4.0)


class TestTrainConfig:
    def test_step_schedule(self):
        cfg = TrainConfig(lr_weights=0.01, lr_delays=0.02)
        assert cfg.lr_at(0) == (0.01, 0.02)
        assert cfg.lr_at(19) == (0.01, 0.02)
        np.testing.assert_allclose(cfg.lr_at(20), (0.0095, 0.019))
        np.testing.assert_allclose(cfg.lr_at(45), (0.01 * 0.95 ** 2, 0.02 * 0.95 ** 2))

    @pytest.mark.parametrize("kw", [dict(batch_size=0), dict(lr_weights=-1.0),
                                    dict(adam_beta=(1.0, 0.9)), dict(max_dw=0.0),
                                    dict(scheduler_step=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestAdam:
    def test_first_step_is_sign_times_lr(self):
        n = net()
        grads = [np.ones_like(p) * 0.3 if p.size else None for p in n.parameters()]
        before = [p.copy() for p in n.parameters()]
        cfg = TrainConfig(lr_weights=0.01, lr_delays=0.02)
        adam_step(n, grads, OptimizerState.zeros_like(n.parameters()), cfg, 0.01, 0.02)
        for layer, b, p in zip(n.layers, before, n.parameters()):
            if p.size == 0:
                continue
            lr = 0.02 if hasattr(layer, "theta") else 0.01
            np.testing.assert_allclose(p - b, -lr, rtol=1e-6)

    def test_update_clip(self):
        n = net()
        grads = [np.full_like(p, 5.0) for p in n.parameters()]
        cfg = TrainConfig(max_dw=0.2)
        applied = adam_step(n, grads, OptimizerState.zeros_like(n.parameters()), cfg, 10.0, 10.0)
        for layer, d in zip(n.layers, applied):
            if d is not None and not hasattr(layer, "theta"):
                assert np.abs(d).max() <= 0.2

    def test_shadow_weights_clamped_when_quantising(self):
        n = net("none")
        grads = [-np.ones_like(p) if p.size else None for p in n.parameters()]
        cfg = TrainConfig(max_dw=5.0)
        adam_step(n, grads, OptimizerState.zeros_like(n.parameters()), cfg, 4.0, 0.0,
                  quantizer_max=2.1)
        for nl in n.neuron_layers:
            assert np.abs(nl.weights).max() <= 2.1


def test_silent_policy_bumps_only_silent_neurons():
    n = net("none")
    n.neuron_layers[0].weights[:, :4] = -5.0  # these hidden neurons never fire
    x = np.random.default_rng(0).uniform(0.15, 2.0, (20, 4))
    tape = n.forward(x)
    before = n.neuron_layers[0].weights.copy()
    bumped = silent_policy(n, tape, TrainConfig(bump_value=0.01))
    assert bumped[0][:4].all()
    np.testing.assert_allclose(n.neuron_layers[0].weights[:, :4], before[:, :4] + 0.01)
    np.testing.assert_array_equal(n.neuron_layers[0].weights[:, ~bumped[0]],
                                  before[:, ~bumped[0]])


class TestTraining:
    def test_zero_lr_leaves_parameters(self, data):
        n = net()
        before = [p.copy() for p in n.parameters()]
        cfg = TrainConfig(epochs=2, batch_size=50, lr_weights=0.0, lr_delays=0.0, bump_value=0.0)
        train(n, data["train"], None, cfg, loss_cfg())
        for a, b in zip(before, n.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_seeded_determinism(self, data):
        cfg = TrainConfig(epochs=3, batch_size=50, seed=4)
        a, b = net(), net()
        ra = train(a, data["train"], data["validation"], cfg, loss_cfg())
        rb = train(b, data["train"], data["validation"], cfg, loss_cfg())
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)
        assert ra.log.rows == rb.log.rows

    def test_loss_decreases_and_delays_stay_in_range(self, data):
        n = net()
        cfg = TrainConfig(epochs=15, batch_size=50, lr_weights=0.01, lr_delays=0.01)
        res = train(n, data["train"], data["validation"], cfg, loss_cfg())
        loss = res.log.column("train_loss")
        assert loss[-3:].mean() < loss[0]
        for dl in n.delay_layers:
            d = dl.delays()
            assert np.all(d > dl.shift) and np.all(d < dl.shift + dl.scale)

    def test_resume_is_bit_identical(self, data, tmp_path):
        full = net()
        cfg = TrainConfig(epochs=4, batch_size=50)
        train(full, data["train"], data["validation"], cfg, loss_cfg())

        part = net()
        r2 = train(part, data["train"], data["validation"], TrainConfig(epochs=2, batch_size=50),
                   loss_cfg())
        doc = json.loads(json.dumps(checkpoint(r2)))
        cont = net(seed=99)  # parameters are overwritten by the checkpoint
        r4 = train(cont, data["train"], data["validation"], cfg, loss_cfg(), resume=doc)
        assert r4.epochs_done == 4 and len(r4.log.rows) == 4
        for p, q in zip(full.parameters(), cont.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_nan_aborts_with_state(self, data):
        n = net()
        n.neuron_layers[1].weights[0, 0] = np.nan
        with pytest.raises(NumericalAbort) as exc:
            train(n, data["train"], None, TrainConfig(epochs=1, batch_size=50), loss_cfg())
        assert "network" in exc.value.state and exc.value.state["epoch"] == 0

    def test_evaluate(self, data):
        n = net()
        err, loss, preds = evaluate(n, *data["test"], loss_cfg(), chunk=40)
        assert 0.0 <= err <= 1.0 and np.isfinite(loss)
        assert preds.shape == data["test"][1].shape


def test_metrics_log_text():
    log = MetricsLog()
    log.append(epoch=1, train_loss=0.5, train_err=0.4, val_err=0.3, lr_w=0.01, lr_d=0.02)
    text = log.to_text(header="config_hash=abc")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1].split("\t")[0] == "epoch"
    assert lines[2].split("\t")[:2] == ["1", "0.5"]
