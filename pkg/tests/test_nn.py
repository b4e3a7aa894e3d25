import numpy as np
import pytest

from gyrocal.exceptions import DatasetLoadError, InvalidArgumentError, ShapeError
from gyrocal.nn import (
    AdamState,
    BiasRegressor,
    NetworkConfig,
    TrainConfig,
    adam_step,
    backward,
    conv1d_forward,
    forward,
    init_params,
    leaky_relu,
    load_checkpoint,
    max_pool1d,
    mse_loss,
    save_checkpoint,
    train,
    zero_params,
)
from gyrocal.nn.layers import conv1d_backward, max_pool1d_backward, max_pool1d_with_indices


def _brute_forward(params, cfg, x):
    # direct loops over the layer definitions, no im2col or batching
    c, s = x.shape
    f, m, st = cfg.filters, cfg.kernel_size, cfg.stride
    l1 = (s - m) // st + 1
    conv = np.zeros((f, l1))
    for fi in range(f):
        for li in range(l1):
            acc = params["conv_b"][fi]
            for ci in range(c):
                for j in range(m):
                    acc += x[ci, li * st + j] * params["conv_w"][fi, ci, j]
            conv[fi, li] = acc
    act = np.where(conv >= 0, conv, cfg.slope * conv)
    p = cfg.pool_size
    l2 = l1 // p
    pooled = np.array([[max(act[fi, k * p : (k + 1) * p]) for k in range(l2)] for fi in range(f)])
    flat = pooled.reshape(-1)  # filter-major
    h = flat @ params["w1"] + params["b1"]
    h = np.where(h >= 0, h, cfg.slope * h)
    return h @ params["w2"] + params["b2"]


class TestLayers:
    @pytest.mark.parametrize(
        "x, kernel, expected",
        [([1.0, 2.0, 3.0, 4.0], [1.0], [1.0, 2.0, 3.0, 4.0]), ([1.0, 2.0, 3.0], [1.0, 1.0], [3.0, 5.0])],
    )
    def test_conv_hand_examples(self, x, kernel, expected):
        out = conv1d_forward(np.array([x]), np.array([[kernel]]), np.zeros(1))
        np.testing.assert_array_equal(out, [expected])

    def test_conv_unit_kernel(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        out = conv1d_forward(x, np.array([[[1.0, 1.0]]]), np.zeros(1))
        np.testing.assert_array_equal(out, [[3.0, 5.0, 7.0]])

    def test_conv_is_cross_correlation_with_stride(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        out = conv1d_forward(x, np.array([[[1.0, 0.0, -1.0]]]), np.array([0.5]), stride=2)
        np.testing.assert_array_equal(out, [[-1.5, -1.5]])

    def test_conv_sums_channels(self):
        x = np.array([[1.0, 2.0], [10.0, 20.0]])
        out = conv1d_forward(x, np.ones((1, 2, 2)), np.zeros(1))
        np.testing.assert_array_equal(out, [[33.0]])

    def test_conv_shape_errors(self):
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((2, 5)), np.zeros((1, 3, 2)), np.zeros(1))
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((1, 2)), np.zeros((1, 1, 3)), np.zeros(1))

    def test_conv_backward_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 3, 11))
        k = rng.normal(size=(4, 3, 3))
        b = rng.normal(size=4)
        g = rng.normal(size=(2, 4, 5))
        dk, db = conv1d_backward(x, k, g, stride=2)
        h = 1e-6
        for idx in [(0, 0, 0), (3, 2, 1), (1, 1, 2)]:
            kp, km = k.copy(), k.copy()
            kp[idx] += h
            km[idx] -= h
            num = (np.sum(conv1d_forward(x, kp, b, 2) * g) - np.sum(conv1d_forward(x, km, b, 2) * g)) / (2 * h)
            assert dk[idx] == pytest.approx(num, rel=1e-6)
        np.testing.assert_allclose(db, g.sum(axis=(0, 2)))

    @pytest.mark.parametrize("x, expected", [(-1.0, -0.1), (2.0, 2.0), (0.0, 0.0), (-2.0, -0.2)])
    def test_leaky_relu(self, x, expected):
        assert leaky_relu(np.array([x]))[0] == expected

    @pytest.mark.parametrize(
        "x, p, expected",
        [
            ([3, 1, 4, 1, 5, 9], 2, [3, 4, 9]),
            ([3, 1, 4], 1, [3, 1, 4]),
            ([1, 2, 3, 4, 5], 2, [2, 4]),
        ],
    )
    def test_max_pool(self, x, p, expected):
        np.testing.assert_array_equal(max_pool1d(np.array(x, dtype=float), p), expected)

    def test_max_pool_too_short(self):
        with pytest.raises(ShapeError):
            max_pool1d(np.zeros(3), 4)

    def test_pool_ties_route_to_first(self):
        out, idx = max_pool1d_with_indices(np.array([[3.0, 3.0, 1.0, 1.0]]), 2)
        np.testing.assert_array_equal(idx, [[0, 0]])
        grad = max_pool1d_backward(np.array([[1.0, 2.0]]), idx, 4, 2)
        np.testing.assert_array_equal(grad, [[1.0, 0.0, 2.0, 0.0]])


def _cfg(c=3, s=32, **kw):
    base = dict(filters=4, kernel_size=5, stride=1, pool_size=3, hidden=6)
    base.update(kw)
    return NetworkConfig(c, s, **base)


class TestNetwork:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("c", [3, 6])
    def test_forward_matches_brute_force(self, c, stride):
        cfg = _cfg(c, 24, stride=stride)
        params = init_params(cfg, seed=1)
        x = np.random.default_rng(2).normal(size=(c, 24))
        np.testing.assert_allclose(forward(params, cfg, x), _brute_forward(params, cfg, x), rtol=1e-12, atol=1e-14)

    def test_batch_matches_single(self):
        cfg = _cfg()
        params = init_params(cfg, seed=3)
        xb = np.random.default_rng(4).normal(size=(5, 3, 32))
        batch = forward(params, cfg, xb)
        for i in range(5):
            np.testing.assert_allclose(batch[i], forward(params, cfg, xb[i]), rtol=1e-13)

    def test_zero_network_outputs_b2(self):
        cfg = _cfg()
        params = zero_params(cfg)
        params["b2"] = np.array([0.1, -0.2, 0.3])
        assert np.array_equal(forward(params, cfg, np.random.default_rng(0).normal(size=(3, 32))), params["b2"])

    def test_identical_windows_identical_rows(self):
        cfg = _cfg()
        out = forward(init_params(cfg, seed=2), cfg, np.tile(np.random.default_rng(1).normal(size=(3, 32)), (4, 1, 1)))
        assert all(np.array_equal(out[0], row) for row in out)

    def test_spec_small_config_matches_reference(self):
        cfg = NetworkConfig(3, 20, filters=2, kernel_size=3, pool_size=2, hidden=4)
        params = init_params(cfg, seed=8)
        x = np.random.default_rng(9).normal(size=(3, 20))
        np.testing.assert_allclose(forward(params, cfg, x), _brute_forward(params, cfg, x), rtol=1e-12, atol=1e-15)

    def test_zero_gradients_at_exact_fit(self):
        cfg = _cfg()
        params = init_params(cfg, seed=3)
        x = np.random.default_rng(4).normal(size=(2, 3, 32))
        loss, grads = backward(params, cfg, x, forward(params, cfg, x))
        assert loss == 0.0 and all(np.all(g == 0) for g in grads.values())

    def test_config_dimensions(self):
        cfg = NetworkConfig(3, 1500, filters=16, kernel_size=7, stride=1, pool_size=4)
        assert (cfg.conv_len, cfg.pooled_len, cfg.flat_dim) == (1494, 373, 16 * 373)

    def test_rejects_wrong_shapes(self):
        cfg = _cfg()
        params = init_params(cfg, seed=0)
        with pytest.raises(ShapeError):
            forward(params, cfg, np.zeros((3, 31)))
        with pytest.raises(ShapeError):
            forward(params, cfg, np.zeros((6, 32)))
        with pytest.raises(ShapeError):
            BiasRegressor(cfg, {**params, "w1": np.zeros((2, 2))})
        with pytest.raises(InvalidArgumentError):
            NetworkConfig(3, 4, kernel_size=7)

    def test_mse(self):
        assert mse_loss([1.0, 1.0], [0.0, 0.0]) == 1.0
        assert mse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse_loss([1.0, 2.0], [1.0, 4.0]) == 2.0
        with pytest.raises(ShapeError):
            mse_loss([1.0], [1.0, 2.0])

    @pytest.mark.parametrize("s", [16, 32])
    @pytest.mark.parametrize("c", [3, 6])
    @pytest.mark.parametrize("conv_bias", [True, False])
    def test_gradient_check(self, c, s, conv_bias):
        cfg = _cfg(c, s, stride=2 if s == 32 else 1, conv_bias=conv_bias)
        params = init_params(cfg, seed=5)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, c, s))
        y = rng.normal(size=(4, c))
        _, grads = backward(params, cfg, x, y)
        h = 1e-6
        for name, p in params.items():
            if name == "conv_b" and not conv_bias:
                assert np.all(grads[name] == 0)
                continue
            flat_idx = rng.choice(p.size, size=min(p.size, 6), replace=False)
            for fi in flat_idx:
                idx = np.unravel_index(fi, p.shape)
                plus = {k: v.copy() for k, v in params.items()}
                minus = {k: v.copy() for k, v in params.items()}
                plus[name][idx] += h
                minus[name][idx] -= h
                num = (mse_loss(forward(plus, cfg, x), y) - mse_loss(forward(minus, cfg, x), y)) / (2 * h)
                ana = grads[name][idx]
                denom = max(abs(num), abs(ana), 1e-8)
                assert abs(num - ana) / denom < 1e-4, (name, idx, num, ana)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        params = {"w": np.array([1.0, -2.0])}
        new, _ = adam_step(params, {"w": np.zeros(2)}, AdamState(), t=1, lr=0.1)
        np.testing.assert_array_equal(new["w"], params["w"])

    def test_first_step_is_lr_times_sign(self):
        params = {"w": np.array([1.0, 1.0])}
        new, _ = adam_step(params, {"w": np.array([3.0, -0.5])}, AdamState(), t=1, lr=0.01)
        np.testing.assert_allclose(new["w"], [0.99, 1.01], rtol=0, atol=1e-8)

    def test_reference_trace_on_quadratic(self):
        # minimise theta^2 from 1.0 with hand-written Adam recurrences
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        theta, m, v = 1.0, 0.0, 0.0
        params, state = {"w": np.array([1.0])}, AdamState()
        for t in range(1, 6):
            g = 2 * theta
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta = theta - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
            params, state = adam_step(params, {"w": 2 * params["w"]}, state, t, lr, b1, b2, eps)
            assert params["w"][0] == pytest.approx(theta, abs=1e-12)

    def test_step_counter_starts_at_one(self):
        with pytest.raises(InvalidArgumentError):
            adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamState(), t=0, lr=0.1)


class TestTrain:
    def _data(self, n=8, seed=0):
        rng = np.random.default_rng(seed)
        bias = rng.uniform(-0.3, 0.3, (n, 3))
        x = bias[:, :, None] + rng.normal(0, 0.04, (n, 3, 20))
        return x, bias

    def test_overfits_single_example(self):
        x, y = self._data(1)
        cfg = _cfg(3, 20, hidden=16)
        rep = train(x, y, cfg, TrainConfig(batch_size=1, learning_rate=1e-3, epochs=200))
        assert rep.losses[-1] < 0.01 * rep.losses[0]
        # decreasing on average: each quarter of training ends lower than the previous one
        quarters = [np.mean(rep.losses[i : i + 50]) for i in range(0, 200, 50)]
        assert quarters == sorted(quarters, reverse=True)

    def test_zero_lr_keeps_init(self):
        x, y = self._data()
        cfg = _cfg(3, 20)
        init = init_params(cfg, seed=4)
        rep = train(x, y, cfg, TrainConfig(learning_rate=0.0, epochs=3), init=init)
        for k in init:
            np.testing.assert_array_equal(rep.params[k], init[k])

    def test_deterministic(self):
        x, y = self._data()
        cfg = _cfg(3, 20)
        tc = TrainConfig(batch_size=3, learning_rate=1e-3, epochs=5, seed=11)
        a, b = train(x, y, cfg, tc), train(x, y, cfg, tc)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
        assert a.losses == b.losses
        c = train(x, y, cfg, TrainConfig(batch_size=3, learning_rate=1e-3, epochs=5, seed=12))
        assert c.losses != a.losses

    def test_lr_schedule(self):
        tc = TrainConfig()
        assert [tc.lr_at(e) for e in (0, 199, 200, 1199)] == pytest.approx([1e-4, 1e-4, 1e-5, 1e-9])

    def test_log_csv(self):
        x, y = self._data()
        rep = train(x, y, _cfg(3, 20), TrainConfig(epochs=2))
        lines = rep.log_csv().splitlines()
        assert lines[0] == "epoch,train_loss,lr" and len(lines) == 3

    def test_rejects_bad_input(self):
        x, y = self._data()
        with pytest.raises(InvalidArgumentError):
            train(x, y[:3], _cfg(3, 20), TrainConfig(epochs=1))
        with pytest.raises(ShapeError):
            train(x[:, :, :10], y, _cfg(3, 20), TrainConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = _cfg()
        model = BiasRegressor(cfg, init_params(cfg, seed=9), window_s=0.2, sample_rate=150.0)
        path = save_checkpoint(tmp_path / "m.json", model, seed=9, meta={"note": "x"})
        again, info = load_checkpoint(path)
        assert again.config == cfg and again.window_s == 0.2 and info["seed"] == 9
        for k in model.params:
            assert again.params[k].tobytes() == model.params[k].tobytes()
        x = np.random.default_rng(0).normal(size=(3, 32))
        assert again.predict(x).tobytes() == model.predict(x).tobytes()
        save_checkpoint(tmp_path / "m2.json", again, seed=9, meta={"note": "x"})
        assert (tmp_path / "m2.json").read_bytes() == path.read_bytes()

    def test_bad_format(self, tmp_path):
        (tmp_path / "m.json").write_text('{"format": "other"}')
        with pytest.raises(DatasetLoadError):
            load_checkpoint(tmp_path / "m.json")
        with pytest.raises(DatasetLoadError):
            load_checkpoint(tmp_path / "missing.json")
