import math

import numpy as np
import pytest

from dauconv import engine
from dauconv.data import DatasetSplit, synthesize_images
from dauconv.errors import ConfigError, TrainingError


def tiny_spec(classes=4, units=2, sigma=0.5, features=(4, 6)):
    return engine.NetworkSpec(
        input_shape=(3, 8, 8),
        classes=classes,
        layers=[
            engine.LayerSpec("dau", features[0], units=units, sigma=sigma, pool=True),
            engine.LayerSpec("dau", features[1], units=units, sigma=sigma, pool=True),
            engine.LayerSpec("fc", classes),
        ],
    )


def tiny_dataset(n=64, classes=4, seed=0, hw=8):
    images_u8, labels = synthesize_images(n, seed, classes=classes)
    images = images_u8.astype(np.float32) / 255.0
    images = images[:, :, :hw, :hw]
    images -= images.mean(axis=(0, 2, 3), keepdims=True)
    return DatasetSplit(images, labels % classes, np.zeros(3, np.float32))


class TestSpecValidation:
    def test_valid_spec_passes(self):
        tiny_spec().validate()

    def test_rejects_missing_fc_head(self):
        spec = engine.NetworkSpec((3, 8, 8), 4, [engine.LayerSpec("dau", 4)])
        with pytest.raises(ConfigError):
            spec.validate()

    def test_rejects_fc_mid_stack(self):
        spec = engine.NetworkSpec(
            (3, 8, 8), 4, [engine.LayerSpec("fc", 4), engine.LayerSpec("dau", 4)]
        )
        with pytest.raises(ConfigError):
            spec.validate()

    def test_rejects_wrong_head_width(self):
        spec = engine.NetworkSpec((3, 8, 8), 4, [engine.LayerSpec("fc", 5)])
        with pytest.raises(ConfigError):
            spec.validate()

    def test_roundtrip_dict(self):
        spec = tiny_spec()
        again = engine.NetworkSpec.from_dict(spec.to_dict())
        assert again == spec


class TestBuildNetwork:
    def test_same_seed_identical_params(self):
        a = engine.build_network(tiny_spec(), seed=7)
        b = engine.build_network(tiny_spec(), seed=7)
        for (na, va), (nb, vb) in zip(a.state_arrays(), b.state_arrays()):
            assert na == nb
            np.testing.assert_array_equal(va, vb)

    def test_different_seed_differs(self):
        a = engine.build_network(tiny_spec(), seed=7)
        b = engine.build_network(tiny_spec(), seed=8)
        assert any(
            not np.array_equal(va, vb)
            for (_, va), (_, vb) in zip(a.state_arrays(), b.state_arrays())
        )

    def test_parameter_count_closed_form(self):
        spec = tiny_spec(units=3)
        model = engine.build_network(spec, seed=0)
        f1, f2 = 4, 6
        dau_params = (3 * 3 * f1 * 3 + f1) + (3 * 3 * f2 * f1 + f2)
        bn_params = 2 * f1 + 2 * f2
        fc_params = f2 * 2 * 2 * 4 + 4
        assert engine.parameter_count(model) == dau_params + bn_params + fc_params

    def test_logistic_regression_spec(self):
        spec = engine.NetworkSpec((3, 1, 1), 2, [engine.LayerSpec("fc", 2)])
        model = engine.build_network(spec, seed=0)
        x = np.random.default_rng(0).normal(size=(5, 3, 1, 1)).astype(np.float32)
        assert model.forward(x).shape == (5, 2)

    def test_forward_shapes(self):
        model = engine.build_network(tiny_spec(), seed=0)
        x = np.zeros((2, 3, 8, 8), np.float32)
        assert model.forward(x).shape == (2, 4)


class TestSgdStep:
    def _ready_model(self):
        model = engine.build_network(tiny_spec(), seed=1)
        x = tiny_dataset(8).images
        labels = tiny_dataset(8).labels
        from dauconv.layers import softmax_xent

        logits = model.forward(x, training=True)
        _, dlogits = softmax_xent(logits, labels)
        model.backward(dlogits)
        return model

    def _zero_grads(self, model):
        # a backward pass from a zero upstream gradient zeroes every grad
        x = np.zeros((4, 3, 8, 8), np.float32)
        model.forward(x, training=True)
        model.backward(np.zeros((4, model.spec.classes), np.float32))

    def test_zero_gradients_zero_decay_is_identity(self):
        model = self._ready_model()
        self._zero_grads(model)
        model.velocities = [np.zeros_like(v) for v in model.velocities]
        before = [v.copy() for _, v, _ in model.param_iter()]
        engine.sgd_step(model, engine.TrainConfig(weight_decay=0.0), lr=0.5)
        for b, (_, v, _) in zip(before, model.param_iter()):
            np.testing.assert_array_equal(b, v)

    def test_single_step_update_formula(self):
        model = self._ready_model()
        cfg = engine.TrainConfig(momentum=0.0, weight_decay=0.01)
        lr = 0.1
        expected = []
        for kind, value, grad in model.param_iter():
            lam = 0.0 if kind == "mu" else cfg.weight_decay
            expected.append(value - lr * (grad.astype(value.dtype) + lam * value))
        engine.sgd_step(model, cfg, lr)
        for exp, (kind, value, _) in zip(expected, model.param_iter()):
            if kind == "mu":
                exp = np.clip(exp, -4.0, 4.0)
            np.testing.assert_allclose(value, exp, atol=1e-7)

    def test_displacements_clamped(self):
        model = self._ready_model()
        layer = model.dau_layers()[0]
        layer.p.mu[...] = 3.9
        layer._grads.dmu[...] = -100.0  # pushes mu past the +4 boundary
        engine.sgd_step(model, engine.TrainConfig(momentum=0.0), lr=1.0)
        assert layer.p.mu.max() <= 4.0 and layer.p.mu.min() >= -4.0
        assert layer.p.mu.max() == 4.0

    def test_nonfinite_gradient_aborts(self):
        model = self._ready_model()
        model.dau_layers()[0]._grads.dw[0, 0, 0] = np.nan
        with pytest.raises(TrainingError):
            engine.sgd_step(model, engine.TrainConfig(), lr=0.1)

    def test_decay_exemption_property(self):
        # zero gradients, no momentum: w shrinks geometrically, mu frozen
        model = self._ready_model()
        self._zero_grads(model)
        model.velocities = [np.zeros_like(v) for v in model.velocities]
        cfg = engine.TrainConfig(momentum=0.0, weight_decay=0.1)
        dlayer = model.dau_layers()[0]
        w0 = dlayer.p.w.copy()
        mu0 = dlayer.p.mu.copy()
        for _ in range(3):
            engine.sgd_step(model, cfg, lr=0.5)
        np.testing.assert_array_equal(dlayer.p.mu, mu0)
        np.testing.assert_allclose(dlayer.p.w, w0 * (1 - 0.5 * 0.1) ** 3, rtol=1e-5)


class TestTrainLoop:
    def test_zero_epochs_is_noop(self):
        model = engine.build_network(tiny_spec(), seed=2)
        before = [v.copy() for _, v in model.state_arrays()]
        data = tiny_dataset(16)
        model, records = engine.train(model, data, engine.TrainConfig(epochs=0))
        assert records == []
        for b, (_, v) in zip(before, model.state_arrays()):
            np.testing.assert_array_equal(b, v)

    def test_lr_zero_like_fixed_point(self):
        # base_lr must be positive; a 0-lr step via schedule keeps params fixed
        model = engine.build_network(tiny_spec(), seed=3)
        data = tiny_dataset(16)
        cfg = engine.TrainConfig(epochs=1, batch_size=8, base_lr=0.01, lr_steps={0: 0.0})
        before = [v.copy() for _, v, _ in model.param_iter()]
        model, _ = engine.train(model, data, cfg)
        for b, (_, v, _) in zip(before, model.param_iter()):
            np.testing.assert_array_equal(b, v)

    def test_determinism_same_seed(self):
        data = tiny_dataset(32)
        runs = []
        for _ in range(2):
            model = engine.build_network(tiny_spec(), seed=4)
            cfg = engine.TrainConfig(epochs=2, batch_size=8, seed=11)
            _, records = engine.train(model, data, cfg, eval_split=data)
            runs.append(engine.metrics_to_csv(records))
        assert runs[0] == runs[1]

    def test_loss_beats_chance_after_one_epoch(self):
        # full 32x32 synthetic images, 10 classes, one epoch beats chance level
        images_u8, labels = synthesize_images(2000, seed=3)
        images = images_u8.astype(np.float32) / 255.0
        images -= images.mean(axis=(0, 2, 3), keepdims=True)
        data = DatasetSplit(images, labels, np.zeros(3, np.float32))
        spec = engine.NetworkSpec(
            (3, 32, 32), 10,
            [engine.LayerSpec("dau", 12, units=4, sigma=0.5, pool=True),
             engine.LayerSpec("dau", 16, units=4, sigma=0.5, pool=True),
             engine.LayerSpec("fc", 10)],
        )
        model = engine.build_network(spec, seed=5)
        cfg = engine.TrainConfig(epochs=1, batch_size=32)
        _, records = engine.train(model, data, cfg)
        assert records[0]["train_loss"] < math.log(10) + 0.1

    def test_overfits_small_sample(self):
        data = tiny_dataset(64, classes=4, seed=9)
        model = engine.build_network(tiny_spec(features=(8, 8)), seed=6)
        cfg = engine.TrainConfig(epochs=60, batch_size=16, base_lr=0.02, lr_steps={45: 0.002})
        model, _ = engine.train(model, data, cfg)
        acc = engine.evaluate(model, data)
        assert acc >= 0.99

    def test_mirror_flag_changes_batches_not_determinism(self):
        data = tiny_dataset(32)
        outs = []
        for _ in range(2):
            model = engine.build_network(tiny_spec(), seed=4)
            cfg = engine.TrainConfig(epochs=1, batch_size=8, seed=11, mirror=True)
            _, records = engine.train(model, data, cfg)
            outs.append(records[0]["train_loss"])
        assert outs[0] == outs[1]

    def test_empty_dataset_rejected(self):
        model = engine.build_network(tiny_spec(), seed=0)
        empty = DatasetSplit(np.zeros((0, 3, 8, 8), np.float32), np.zeros(0, np.int64),
                             np.zeros(3, np.float32))
        with pytest.raises(TrainingError):
            engine.train(model, empty, engine.TrainConfig(epochs=1))


class TestEvaluate:
    def test_all_correct(self):
        data = tiny_dataset(16)

        class Oracle:
            def forward(self, x, training=False):
                idx = np.where((x == data.images[:, None][:, 0:0]).all() if False else True)
                return None

        # direct check through a trained-free path: logits one-hot from labels
        model = engine.build_network(tiny_spec(), seed=0)
        logits = np.eye(4)[data.labels] * 10.0

        class Stub:
            def forward(self, x, training=False):
                n = x.shape[0]
                Stub.seen = getattr(Stub, "seen", 0)
                lo = Stub.seen
                Stub.seen += n
                return logits[lo : lo + n]

        assert engine.evaluate(Stub(), data) == 1.0

    def test_constant_logits_chance_with_tie_break(self):
        labels = np.arange(10).repeat(10)
        data = DatasetSplit(np.zeros((100, 3, 1, 1), np.float32), labels, np.zeros(3, np.float32))

        class Const:
            def forward(self, x, training=False):
                return np.zeros((x.shape[0], 10), np.float32)

        # ties resolve to class 0: exactly the 10 class-0 samples are right
        assert engine.evaluate(Const(), data) == 0.1

    def test_matches_hand_count(self):
        labels = np.array([0, 1, 2, 1, 0])
        logits = np.array([
            [5.0, 0.0, 0.0],  # right
            [0.0, 1.0, 2.0],  # wrong
            [0.0, 0.0, 3.0],  # right
            [9.0, 8.0, 0.0],  # wrong
            [1.0, 2.0, 0.0],  # wrong
        ])
        data = DatasetSplit(np.zeros((5, 3, 1, 1), np.float32), labels, np.zeros(3, np.float32))

        class Stub:
            def forward(self, x, training=False):
                return logits

        assert engine.evaluate(Stub(), data, batch_size=8) == 2 / 5


class TestMetricsCsv:
    def test_format(self):
        rec = {"epoch": 1, "iter": 10, "train_loss": 0.5, "eval_acc": 0.25, "lr": 0.01}
        out = engine.metrics_to_csv([rec])
        lines = out.strip().split("\n")
        assert lines[0] == "epoch,iter,train_loss,eval_acc,lr"
        assert lines[1] == "1,10,0.5,0.25,0.01"

    def test_lr_schedule(self):
        cfg = engine.TrainConfig(base_lr=0.01, lr_steps={15: 0.001, 18: 0.0001})
        assert cfg.lr_at(0) == 0.01
        assert cfg.lr_at(14) == 0.01
        assert cfg.lr_at(15) == 0.001
        assert cfg.lr_at(17) == 0.001
        assert cfg.lr_at(19) == 0.0001
