import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from actsearch.afdsl import parse, unary
from actsearch.tensornet import (
    Conv2D,
    Dense,
    Depthwise2D,
    Flatten,
    GlobalAvgPool,
    NetworkSpec,
    ShapeError,
    SoftmaxHead,
    TrainConfig,
    backward,
    backward_sampled,
    blobs_network,
    expand_patches,
    forward,
    init_weights,
    load_task,
    make_separable,
    negated_network,
    softmax,
    tiles_network,
    train,
)
from actsearch.tensornet.data import downsample, load_csv, load_idx, save_idx
from actsearch.tensornet.train import learning_rate


def mlp(act="unary_tanh(x)", bias=True):
    return NetworkSpec((3,), (Dense(3, 5, bias), Dense(5, 4, bias), Dense(4, 3, bias), SoftmaxHead()), parse(act))


def small_cnn(act="unary_tanh(x)"):
    return NetworkSpec(
        (5, 5, 2),
        (Conv2D(2, 3, kernel=3, stride=2, padding=1), Depthwise2D(3, kernel=2), Conv2D(3, 4, kernel=1),
         Flatten(), Dense(16, 3), SoftmaxHead()),
        parse(act),
    )


def ce_loss(net, x, y):
    p = softmax(forward(net, x, need_grad=False).logits)
    return -np.sum(np.log(p[np.arange(len(y)), y]))


def randomize_biases(net, rng):
    for b in net.biases:
        if b is not None:
            b[:] = rng.normal(0, 0.3, size=b.shape)
    return net


class TestInit:
    def test_distribution(self):
        spec = NetworkSpec((4,), (Dense(4, 4), Dense(4, 2), SoftmaxHead()), unary("relu"))
        w = np.concatenate([init_weights(spec, s).weights[0].ravel() for s in range(200)])
        sd = np.sqrt(2 / 4)
        assert abs(w.mean()) < 3 * sd / np.sqrt(w.size)
        assert abs(w.std() - sd) < 0.05 * sd

    def test_deterministic(self):
        a, b = init_weights(mlp(), 5), init_weights(mlp(), 5)
        for wa, wb in zip(a.weights, b.weights):
            assert wa.tobytes() == wb.tobytes()

    def test_biases_zero(self):
        for b in init_weights(small_cnn(), 1).biases:
            np.testing.assert_array_equal(b, 0.0)

    def test_param_counts(self):
        assert blobs_network().param_counts == [8 * 16 + 16, 16 * 16 + 16, 16 * 4 + 4]
        assert tiles_network().param_counts == [9 * 8 + 8, 9 * 8 + 8, 8 * 16 + 16, 16 * 4 + 4]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            NetworkSpec((3,), (Dense(4, 2), SoftmaxHead()))
        with pytest.raises(ShapeError):
            NetworkSpec((4, 4, 1), (Conv2D(2, 2), SoftmaxHead()))


class TestForward:
    def test_affine_single_layer(self, rng):
        spec = NetworkSpec((3,), (Dense(3, 2), SoftmaxHead()), unary("identity"))
        net = randomize_biases(init_weights(spec, 0), rng)
        x = rng.normal(size=(6, 3))
        want = np.concatenate([np.ones((6, 1)), x], axis=1) @ net.homogeneous_weights(0).T
        np.testing.assert_allclose(forward(net, x).logits, want, rtol=1e-14)

    def test_identity_1x1_conv(self, rng):
        spec = NetworkSpec((4, 4, 3), (Conv2D(3, 3, kernel=1, bias=False), GlobalAvgPool(), Dense(3, 2),
                                       SoftmaxHead()), unary("identity"))
        net = init_weights(spec, 0)
        net.weights[0] = np.eye(3)
        x = rng.normal(size=(2, 4, 4, 3))
        np.testing.assert_array_equal(forward(net, x).records[0].preact, x)

    def test_zero_weights_uniform_softmax(self, rng):
        net = init_weights(mlp(), 0)
        net.weights = [np.zeros_like(w) for w in net.weights]
        tr = forward(net, rng.normal(size=(5, 3)))
        np.testing.assert_array_equal(tr.logits, 0.0)
        np.testing.assert_allclose(softmax(tr.logits), 1 / 3, rtol=1e-15)

    def test_softmax_rows(self, rng):
        p = softmax(rng.normal(scale=30, size=(50, 7)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_non_finite_recorded(self):
        net = init_weights(mlp("unary_reciprocal(x)"), 0)
        tr = forward(net, np.zeros((2, 3)))
        assert not np.all(np.isfinite(tr.logits))


class TestBackward:
    @pytest.mark.parametrize("make", [mlp, small_cnn])
    def test_weight_gradients_against_finite_differences(self, make, rng):
        spec = make()
        net = randomize_biases(init_weights(spec, 3), rng)
        x = rng.normal(size=(4, *spec.input_shape))
        y = rng.integers(0, 3, size=4)
        tr = forward(net, x)
        d = softmax(tr.logits)
        d[np.arange(4), y] -= 1.0
        _, dws, dbs = backward(net, tr, d)
        h = 1e-6
        for params, grads in ((net.weights, dws), (net.biases, dbs)):
            for p, g in zip(params, grads):
                fd = np.zeros_like(p)
                for idx in np.ndindex(p.shape):
                    old = p[idx]
                    p[idx] = old + h
                    lp = ce_loss(net, x, y)
                    p[idx] = old - h
                    lm = ce_loss(net, x, y)
                    p[idx] = old
                    fd[idx] = (lp - lm) / (2 * h)
                np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_preactivation_gradients_against_finite_differences(self, rng):
        # perturbing the bias of a layer shifts its pre-activation for every sample
        spec = NetworkSpec((3,), (Dense(3, 4), Dense(4, 2), SoftmaxHead()), unary("softplus"))
        net = init_weights(spec, 0)
        x = rng.normal(size=(1, 3))
        y = np.array([1])
        tr = forward(net, x)
        d = softmax(tr.logits)
        d[0, 1] -= 1.0
        ds, _, _ = backward(net, tr, d)
        h = 1e-6
        for l in range(2):
            fd = np.zeros(net.biases[l].shape)
            for j in range(fd.size):
                net.biases[l][j] += h
                lp = ce_loss(net, x, y)
                net.biases[l][j] -= 2 * h
                lm = ce_loss(net, x, y)
                net.biases[l][j] += h
                fd[j] = (lp - lm) / (2 * h)
            np.testing.assert_allclose(ds[l][0], fd, rtol=1e-5, atol=1e-8)

    def test_sampled_head_gradient(self, rng):
        net = init_weights(mlp(), 1)
        tr = forward(net, rng.normal(size=(6, 3)))
        bt = backward_sampled(net, tr, mc_samples=3, seed=4)
        p = softmax(tr.logits)
        for s in range(3):
            want = p.copy()
            want[np.arange(6), bt.labels[s]] -= 1.0
            np.testing.assert_allclose(bt.preact_grads[-1][s], want, rtol=1e-14)

    def test_head_gradient_mean_vanishes(self, rng):
        net = init_weights(mlp(), 2)
        tr = forward(net, rng.normal(size=(1, 3)))
        n = 10_000
        g = backward_sampled(net, tr, mc_samples=n, seed=0).preact_grads[-1][:, 0, :]
        se = g.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(g.mean(axis=0)) <= 3 * se)

    def test_conv_homogeneous_rows(self, rng):
        net = init_weights(small_cnn(), 0)
        x = rng.normal(size=(2, 5, 5, 2))
        bt = backward_sampled(net, forward(net, x))
        a0 = bt.activations[0]
        np.testing.assert_array_equal(a0[:, 0], 1.0)
        np.testing.assert_array_equal(a0[:, 1:], expand_patches(x, 3, 2, 1))
        assert bt.preact_grads[0].shape == (1, 2 * 3 * 3, 3)


class TestNegation:
    @pytest.mark.parametrize("act", ["unary_elu(x)", "binary_mul(unary_sigmoid(x),unary_identity(x))",
                                     "binary_add(unary_exp(x),unary_sinh(x))"])
    @pytest.mark.parametrize("make", [mlp, small_cnn])
    def test_same_logits(self, act, make, rng):
        net = init_weights(make(act), 9)
        x = rng.normal(size=(5, *net.spec.input_shape))
        np.testing.assert_allclose(forward(negated_network(net), x).logits, forward(net, x).logits,
                                   rtol=0, atol=1e-12)

    def test_same_logits_with_biases(self, rng):
        net = randomize_biases(init_weights(mlp("unary_selu(x)"), 9), rng)
        x = rng.normal(size=(5, 3))
        np.testing.assert_allclose(forward(negated_network(net), x).logits, forward(net, x).logits,
                                   rtol=0, atol=1e-12)


class TestTrain:
    def test_schedule(self):
        lrs = [learning_rate(s, 100, 10, 0.1) for s in range(100)]
        assert lrs[9] == pytest.approx(0.1)
        assert lrs[0] == pytest.approx(0.01)
        assert all(a >= b for a, b in zip(lrs[9:], lrs[10:]))
        assert lrs[-1] < 0.01

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"momentum": 1.0}, {"epochs": 2, "warmup_epochs": 3}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_separable_against_logistic_regression(self):
        data = make_separable(seed=1)
        oracle = LogisticRegression().fit(data.x_train, data.y_train).score(data.x_val, data.y_val)
        assert oracle >= 0.95
        cfg = TrainConfig(epochs=5, warmup_epochs=1)
        for act in ("unary_relu(x)", "unary_identity(x)"):
            spec = NetworkSpec((2,), (Dense(2, 8), Dense(8, 2), SoftmaxHead()), parse(act))
            _, acc = train(init_weights(spec, 0), data, cfg)
            assert acc >= 0.95

    def test_zero_activation_is_chance(self):
        data = make_separable(seed=1)
        spec = NetworkSpec((2,), (Dense(2, 8), Dense(8, 2), SoftmaxHead()), unary("zero"))
        _, acc = train(init_weights(spec, 0), data, TrainConfig(epochs=3, warmup_epochs=1))
        assert acc == 0.5

    def test_non_finite_loss_is_chance(self):
        data, spec = load_task("blobs", n_train=256, n_val=64)
        net = init_weights(spec.with_activation("unary_reciprocal(x)"), 0)
        net.biases = [np.zeros_like(b) for b in net.biases]
        data.x_train[:] = 0.0
        _, acc = train(net, data, TrainConfig(epochs=2, warmup_epochs=1))
        assert acc == 0.25

    def test_deterministic(self):
        data, spec = load_task("blobs", n_train=256, n_val=64)
        cfg = TrainConfig(epochs=2, warmup_epochs=1)
        a, acc_a = train(init_weights(spec.with_activation("unary_tanh(x)"), 0), data, cfg)
        b, acc_b = train(init_weights(spec.with_activation("unary_tanh(x)"), 0), data, cfg)
        assert acc_a == acc_b
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.weights, b.weights))


class TestData:
    def test_idx_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 255, size=(3, 4, 5)).astype(np.uint8)
        save_idx(tmp_path / "a.idx", arr)
        np.testing.assert_array_equal(load_idx(tmp_path / "a.idx"), arr)

    def test_csv(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("label,p0,p1,p2,p3\n1,0,1,2,3\n0,4,5,6,7\n")
        x, y = load_csv(path, side=2)
        np.testing.assert_array_equal(y, [1, 0])
        assert x.shape == (2, 2, 2)

    def test_tiles_task_shapes(self):
        data, spec = load_task("tiles", n_train=16, n_val=8)
        assert data.x_train.shape[1:] == spec.input_shape == (8, 8, 1)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            load_task("imagenet")

    def test_downsample_block_mean(self, rng):
        img = rng.normal(size=(2, 16, 16))
        want = img.reshape(2, 8, 2, 8, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(downsample(img, 8), want, rtol=1e-12)
