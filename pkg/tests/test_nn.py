import numpy as np
import pytest

from flashlive import facecheck, nn


RNG = np.random.default_rng(42)


class TestGradients:
    def test_conv_no_padding(self):
        layer = nn.Conv2D(3, 4, kernel=3, padding=0, rng=np.random.default_rng(1))
        x = RNG.normal(size=(2, 6, 6, 3))
        assert nn.gradient_check(layer, x) < 1e-5

    def test_conv_with_padding(self):
        layer = nn.Conv2D(2, 3, kernel=3, padding=1, rng=np.random.default_rng(2))
        x = RNG.normal(size=(2, 5, 5, 2))
        assert nn.gradient_check(layer, x) < 1e-5

    def test_pool(self):
        layer = nn.MaxPool2x2()
        # distinct values avoid max ties, which are not differentiable
        x = RNG.permutation(np.linspace(-1, 1, 2 * 6 * 6 * 3)).reshape(2, 6, 6, 3)
        assert nn.gradient_check(layer, x) < 1e-5

    def test_relu(self):
        layer = nn.ReLU()
        x = RNG.normal(size=(3, 4, 4, 2)) + 0.05  # keep away from the kink
        assert nn.gradient_check(layer, x) < 1e-5

    def test_linear(self):
        layer = nn.Linear(10, 4, rng=np.random.default_rng(3))
        x = RNG.normal(size=(5, 10))
        assert nn.gradient_check(layer, x) < 1e-5

    def test_loss_gradient(self):
        logits = RNG.normal(size=(6, 2))
        labels = np.array([0, 1, 1, 0, 1, 0])
        _, grad = nn.cross_entropy(logits, labels)
        eps = 1e-6
        for i in range(6):
            for j in range(2):
                hi = logits.copy()
                hi[i, j] += eps
                lo = logits.copy()
                lo[i, j] -= eps
                num = (nn.cross_entropy(hi, labels)[0] - nn.cross_entropy(lo, labels)[0]) / (2 * eps)
                assert abs(num - grad[i, j]) / max(abs(num), abs(grad[i, j]), 1e-8) < 1e-5

    def test_full_net_gradient(self):
        net = facecheck.build_net(seed=5)
        x = RNG.normal(size=(2, 20, 20, 3)) * 0.5
        labels = np.array([0, 1])
        logits = net.forward(x)
        _, grad = nn.cross_entropy(logits, labels)
        net.backward(grad)
        analytic = [g.copy() for g in net.grads]
        eps = 1e-6
        rng = np.random.default_rng(0)
        worst = 0.0
        for p, g in zip(net.params, analytic):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for i in rng.choice(flat.size, size=min(12, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                hi = nn.cross_entropy(net.forward(x), labels)[0]
                flat[i] = orig - eps
                lo = nn.cross_entropy(net.forward(x), labels)[0]
                flat[i] = orig
                num = (hi - lo) / (2 * eps)
                # absolute floor absorbs finite-difference cancellation noise
                # on near-zero gradients; relative criterion rules elsewhere
                denom = max(abs(num), abs(gflat[i]), 1e-3)
                worst = max(worst, abs(num - gflat[i]) / denom)
        assert worst < 1e-5


class TestShapes:
    def test_shape_chain_matches_table(self):
        net = facecheck.build_net()
        assert net.shape_trace((20, 20, 3)) == facecheck.expected_shape_chain()

    def test_forward_shapes(self):
        net = facecheck.build_net()
        out = facecheck.forward(net, RNG.normal(size=(4, 20, 20, 3)))
        assert out.shape == (4, 2)

    def test_zero_weights_zero_scores(self):
        net = facecheck.build_net()
        for p in net.params:
            p[...] = 0.0
        out = facecheck.forward(net, RNG.normal(size=(2, 20, 20, 3)))
        np.testing.assert_array_equal(out, 0.0)

    def test_shape_mismatch_rejected(self):
        net = facecheck.build_net()
        with pytest.raises(ValueError):
            facecheck.forward(net, RNG.normal(size=(2, 19, 20, 3)))


class TestTraining:
    def make_toy(self, n=100):
        # linearly separable: genuine has a bright center band
        rng = np.random.default_rng(7)
        x = rng.normal(0.0, 0.1, size=(n, 20, 20, 3)) + 1.0
        y = np.zeros(n, dtype=int)
        y[n // 2 :] = 1
        x[: n // 2, :, 8:12, :] += 1.0
        return x, y

    def test_separable_toy_reaches_full_accuracy(self):
        x, y = self.make_toy()
        net = facecheck.build_net(seed=3)
        cfg = nn.SGDConfig(max_iter=2000, batch_size=25)
        res = facecheck.train_classifier(net, x, y, config=cfg, seed=3)
        assert res.report.train_accuracy == 1.0
        assert res.report.iterations <= 2000

    def test_training_deterministic(self):
        x, y = self.make_toy(60)
        cfg = nn.SGDConfig(max_iter=150, batch_size=20)
        net1 = facecheck.build_net(seed=9)
        facecheck.train_classifier(net1, x, y, config=cfg, seed=9)
        net2 = facecheck.build_net(seed=9)
        facecheck.train_classifier(net2, x, y, config=cfg, seed=9)
        for a, b in zip(net1.params, net2.params):
            np.testing.assert_array_equal(a, b)

    def test_single_class_rejected(self):
        x = RNG.normal(size=(10, 20, 20, 3))
        y = np.zeros(10, dtype=int)
        net = facecheck.build_net()
        with pytest.raises(ValueError):
            facecheck.train_classifier(net, x, y, config=nn.SGDConfig(max_iter=10))


class TestWeightsCodec:
    def test_round_trip(self):
        net = facecheck.build_net(seed=11)
        blob = facecheck.encode_weights(net)
        assert blob[:4] == b"FFNN"
        other = facecheck.build_net(seed=99)
        facecheck.decode_weights(blob, other)
        for a, b in zip(net.params, other.params):
            np.testing.assert_array_equal(a, b)

    def test_corrupt_rejected(self):
        net = facecheck.build_net()
        blob = facecheck.encode_weights(net)
        with pytest.raises(ValueError):
            facecheck.decode_weights(b"XXXX" + blob[4:], facecheck.build_net())
        with pytest.raises(ValueError):
            facecheck.decode_weights(blob[:-8], facecheck.build_net())

    def test_files(self, tmp_path):
        net = facecheck.build_net(seed=2)
        path = str(tmp_path / "net.ffnn")
        facecheck.save_weights(net, path)
        loaded = facecheck.load_weights(path)
        for a, b in zip(net.params, loaded.params):
            np.testing.assert_array_equal(a, b)
