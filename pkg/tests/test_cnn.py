import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadsig import cnn
from roadsig.forest import ModelFileError


def tiny(seed=0, n_classes=3):
    return cnn.init_model(n_classes, channels=(2,), kernels=(3,), seed=seed)


def batch(n=4, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 40, 6))


class TestLoss:
    def test_uniform(self):
        assert cnn.loss(np.zeros(40), 1) == pytest.approx(math.log(40))

    def test_saturated(self):
        assert cnn.loss(np.eye(5)[2] * 1e6, 3) == pytest.approx(0.0, abs=1e-12)

    def test_hand_value(self):
        expected = -2 + math.log(math.e**2 + math.e + 1)
        assert cnn.loss([2.0, 1.0, 0.0], 1) == pytest.approx(expected) == pytest.approx(0.4076, abs=1e-4)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            cnn.loss([0.0, 0.0], 3)

    @given(arrays(np.float64, (3, 7), elements=st.floats(-500, 500)), st.integers(1, 7))
    @settings(max_examples=80)
    def test_softmax_and_sign(self, logits, label):
        np.testing.assert_allclose(cnn.softmax(logits).sum(axis=1), 1.0, atol=1e-12)
        assert cnn.loss(logits, np.full(3, label)) >= 0.0


class TestForward:
    def test_shape(self):
        m = cnn.init_model(7, channels=(4, 8), kernels=(3, 5))
        assert cnn.forward(m, batch(5)).shape == (5, 7)
        assert cnn.forward(m, batch(1)[0]).shape == (1, 7)

    def test_default_architecture(self):
        m = cnn.init_model(20)
        assert [m.params[f"conv{i}.weight"].shape for i in (1, 2, 3)] == [(64, 6, 3), (128, 64, 5), (1024, 128, 7)]
        assert m.params["fc.weight"].shape == (20, 1024)

    def test_zero_weights(self):
        m = tiny()
        for v in m.params.values():
            v[...] = 0.0
        logits = cnn.forward(m, batch())
        np.testing.assert_array_equal(logits, 0.0)
        np.testing.assert_allclose(cnn.softmax(logits), 1 / 3)

    def test_inference_rows_identical(self):
        m = tiny()
        x = batch(1)
        out = cnn.forward(m, np.concatenate([x, x]), training=False)
        np.testing.assert_array_equal(out[0], out[1])
        np.testing.assert_array_equal(out, cnn.forward(m, np.concatenate([x, x]), training=False))

    @pytest.mark.parametrize("shape", [(2, 40, 5), (40,), (2, 3, 40, 6)])
    def test_bad_shape(self, shape):
        with pytest.raises(ValueError):
            cnn.forward(tiny(), np.zeros(shape))

    def test_batchnorm_normalizes(self):
        m = cnn.init_model(3, channels=(5, 4), kernels=(3, 5), seed=1)
        _, (cache, _, _) = cnn._forward(m, 10 * batch(8), training=True)
        for i, (_, xhat, inv_std, _) in enumerate(cache):
            assert np.abs(xhat.mean(axis=(0, 1))).max() <= 1e-6
            v = 1 / inv_std**2 - cnn.BN_EPS
            np.testing.assert_allclose(xhat.var(axis=(0, 1)), v / (v + cnn.BN_EPS), rtol=1e-10)
            if i == 0:  # channel variance >> eps
                np.testing.assert_allclose(xhat.var(axis=(0, 1)), 1.0, atol=1e-4)


class TestGradients:
    def test_finite_difference(self):
        m = tiny(seed=3).train_mode()
        x, y = batch(4, seed=5), np.array([1, 2, 3, 2])
        _, grads = cnn.gradients(m.copy(), x, y)

        def f(params):
            mm = m.copy()
            mm.params = params
            return cnn.loss(cnn.forward(mm, x, training=True), y)

        h, worst = 1e-5, 0.0
        for name, p in m.params.items():
            for idx in np.ndindex(p.shape):
                plus = {k: v.copy() for k, v in m.params.items()}
                minus = {k: v.copy() for k, v in m.params.items()}
                plus[name][idx] += h
                minus[name][idx] -= h
                num = (f(plus) - f(minus)) / (2 * h)
                ana = grads[name][idx]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-7))
        assert worst < 1e-4

    def test_saturated_zero_gradient(self):
        m = tiny()
        m.params["fc.weight"][...] = 0.0
        m.params["fc.bias"][...] = [1e4, 0.0, 0.0]
        _, g = cnn.gradients(m, batch(), np.ones(4, dtype=int))
        assert max(np.abs(v).max() for v in g.values()) < 1e-12

    def test_duplication_invariance(self):
        m = tiny(seed=2)
        x, y = batch(3), np.array([1, 3, 2])
        _, g1 = cnn.gradients(m.copy(), x, y)
        _, g2 = cnn.gradients(m.copy(), np.concatenate([x, x]), np.concatenate([y, y]))
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)

    def test_running_stats_momentum(self):
        m = tiny()
        x = batch(4)
        _, (cache, _, _) = cnn._forward(m.copy(), x, training=True)
        cnn.gradients(m, x, np.ones(4, dtype=int))
        w = m.params["conv1.weight"]
        z = cnn._im2col(x, 3) @ w.reshape(2, -1).T
        np.testing.assert_allclose(m.buffers["bn1.running_mean"], 0.1 * z.mean(axis=(0, 1)))


class TestAdam:
    def test_zero_grad(self):
        p = {"w": np.array([1.5, -2.0])}
        cnn.adam_step(p, {"w": np.zeros(2)}, cnn.AdamState(), 0.001)
        np.testing.assert_array_equal(p["w"], [1.5, -2.0])

    def test_first_step(self):
        p = {"w": np.array(0.0)}
        cnn.adam_step(p, {"w": np.array(1.0)}, cnn.AdamState(), 0.001)
        assert float(p["w"]) == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    @pytest.mark.parametrize("g", [0.01, 1.0, -3.0])
    def test_sign_following(self, g):
        p, state = {"w": np.array(0.0)}, cnn.AdamState()
        for _ in range(5000):
            before = float(p["w"])
            cnn.adam_step(p, {"w": np.array(g)}, state, 0.001)
        assert float(p["w"]) - before == pytest.approx(-0.001 * np.sign(g), rel=1e-4)


@pytest.mark.parametrize("epoch,lr", [(0, 1e-3), (49, 1e-3), (50, 1e-4), (100, 1e-5), (199, 1e-6)])
def test_lr_schedule(epoch, lr):
    assert cnn.TrainConfig().lr_at(epoch) == pytest.approx(lr, rel=1e-12)


def sine_set(n_per=30, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(40) / 20
    xs, ys = [], []
    for cls, f in enumerate((1.0, 3.0, 6.0), start=1):
        for _ in range(n_per):
            w = 0.1 * rng.normal(size=(40, 6))
            w[:, 2] += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            xs.append(w)
            ys.append(cls)
    return np.array(xs), np.array(ys)


class TestTrain:
    def test_toy_trainable(self):
        x, y = sine_set()
        res = cnn.train(x, y, cnn.TrainConfig(epochs=30, batch_size=16, lr0=0.01, seed=1),
                        channels=(8, 8), kernels=(3, 5), val=sine_set(10, seed=9))
        assert cnn.accuracy(res.model, x, y) >= 0.9
        assert res.best is not None and len(res.log) == 30

    def test_zero_epochs(self):
        x, y = sine_set(2)
        res = cnn.train(x, y, cnn.TrainConfig(epochs=0, seed=4), channels=(3,), kernels=(3,))
        init = cnn.init_model(3, (3,), (3,), seed=4)
        for k in init.params:
            np.testing.assert_array_equal(res.model.params[k], init.params[k])

    def test_deterministic(self):
        x, y = sine_set(5)
        cfg = cnn.TrainConfig(epochs=2, batch_size=8, seed=7)
        a = cnn.train(x, y, cfg, channels=(4,), kernels=(3,)).model
        b = cnn.train(x, y, cfg, channels=(4,), kernels=(3,)).model
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        x, y = sine_set(2)
        x[0, 0, 0] = np.inf
        with pytest.raises(cnn.TrainingDivergedError):
            cnn.train(x, y, cnn.TrainConfig(epochs=1), channels=(2,), kernels=(3,))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        x, y = sine_set(3)
        m = cnn.train(x, y, cnn.TrainConfig(epochs=1), channels=(4,), kernels=(3,)).model
        m.meta["route_segments"] = 3
        cnn.save_cnn(m, tmp_path / "m.npz")
        back = cnn.load_cnn(tmp_path / "m.npz")
        assert back.meta == m.meta
        assert cnn.forward(back, x, training=False).tobytes() == cnn.forward(m, x, training=False).tobytes()

    def test_wrong_format(self, tmp_path):
        (tmp_path / "m.npz").write_bytes(b"\x00garbage")
        with pytest.raises(ModelFileError):
            cnn.load_cnn(tmp_path / "m.npz")
