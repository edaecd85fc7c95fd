import numpy as np
import pytest

from conftest import central_diff
from surrobench.data import Dataset
from surrobench.errors import DomainError, FitError
from surrobench.metrics import err2
from surrobench.mlp import (AdamState, MLPConfig, MLPParams, MLPSurrogate, TrainConfig, adam_step, forward,
                            init_params, loss_and_grad, predict_grad, train, zero_params)


def _perturbed_loss(params, cfg, x, y, layer, kind, idx, h):
    p = params.copy()
    arr = (p.weights if kind == "w" else p.biases)[layer]
    arr[idx] += h
    return loss_and_grad(p, cfg, x, y)[0]


class TestStructure:
    def test_parameter_count_of_benchmark_network(self):
        cfg = MLPConfig(16, (512, 512, 512, 512))
        assert init_params(cfg).count == 797_185

    def test_small_count(self):
        assert init_params(MLPConfig(3, (4, 5))).count == 3 * 4 + 4 + 4 * 5 + 5 + 5 + 1

    def test_zero_network_outputs_zero(self, rng):
        cfg = MLPConfig(3, (4, 4))
        np.testing.assert_array_equal(forward(zero_params(cfg), cfg, rng.uniform(size=(5, 3))), 0.0)

    def test_init_bounds(self):
        p = init_params(MLPConfig(9, (7,), seed=2))
        assert np.abs(p.weights[0]).max() <= 1 / 3 and np.abs(p.weights[1]).max() <= 1 / np.sqrt(7)

    @pytest.mark.parametrize("kw", [dict(input_dim=0), dict(input_dim=2, activation="gelu"),
                                    dict(input_dim=2, hidden_widths=(3, 4), residual=True)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            MLPConfig(**kw)

    def test_param_shape_checks(self):
        with pytest.raises(ValueError):
            MLPParams([np.zeros((2, 3)), np.zeros((1, 4))], [np.zeros(2), np.zeros(1)])

    def test_known_tiny_network(self):
        # relu(x1 - x2) * 2 + 1
        cfg = MLPConfig(2, (1,))
        p = MLPParams([np.array([[1.0, -1.0]]), np.array([[2.0]])], [np.zeros(1), np.ones(1)])
        np.testing.assert_allclose(forward(p, cfg, np.array([[3.0, 1.0], [1.0, 3.0]])), [5.0, 1.0])
        np.testing.assert_allclose(predict_grad(p, cfg, np.array([3.0, 1.0])), [2.0, -2.0])


    def test_residual_layer_with_zero_weights_is_identity(self, rng):
        cfg = MLPConfig(3, (3, 3), "relu", residual=True)
        p = init_params(cfg)
        p.weights[1][:] = 0.0
        p.biases[1][:] = 0.0
        plain = MLPParams([p.weights[0], p.weights[2]], [p.biases[0], p.biases[2]])
        x = rng.uniform(-1, 1, (6, 3))
        np.testing.assert_allclose(forward(p, cfg, x), forward(plain, MLPConfig(3, (3,)), x))

    def test_single_tanh_unit(self, rng):
        cfg = MLPConfig(4, (1,), "tanh")
        p = MLPParams([np.ones((1, 4)), np.array([[2.0]])], [np.zeros(1), np.zeros(1)])
        x = rng.uniform(-1, 1, (5, 4))
        np.testing.assert_allclose(forward(p, cfg, x), 2 * np.tanh(x.sum(axis=1)), rtol=1e-15)


class TestGradients:
    @pytest.mark.parametrize("activation,residual", [("tanh", False), ("tanh", True), ("relu", False)])
    def test_parameter_gradient(self, rng, activation, residual):
        cfg = MLPConfig(3, (6, 6), activation, residual, seed=4)
        p = init_params(cfg)
        x, y = rng.uniform(-1, 1, (12, 3)), rng.standard_normal(12)
        _, g = loss_and_grad(p, cfg, x, y)
        h = 1e-6
        for layer in range(3):
            for kind, arr in (("w", g.weights[layer]), ("b", g.biases[layer])):
                for idx in list(np.ndindex(arr.shape))[:6]:
                    fd = (_perturbed_loss(p, cfg, x, y, layer, kind, idx, h)
                          - _perturbed_loss(p, cfg, x, y, layer, kind, idx, -h)) / (2 * h)
                    assert arr[idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    @pytest.mark.parametrize("residual", [False, True])
    def test_input_gradient(self, rng, residual):
        cfg = MLPConfig(4, (8, 8, 8), "tanh", residual, seed=1)
        p = init_params(cfg)
        for x in rng.uniform(-1, 1, (4, 4)):
            np.testing.assert_allclose(predict_grad(p, cfg, x), central_diff(lambda z: forward(p, cfg, z), x),
                                       rtol=1e-6, atol=1e-9)

    def test_perfect_fit_has_zero_gradient(self, rng):
        cfg = MLPConfig(3, (5,), "tanh")
        p = init_params(cfg)
        x = rng.uniform(-1, 1, (10, 3))
        loss, g = loss_and_grad(p, cfg, x, forward(p, cfg, x))
        assert loss == 0.0
        assert all(np.all(a == 0) for a in g.flat())

    def test_head_gradient_matches_least_squares(self, rng):
        # with a zero first layer only the bias feeds the head, so check the head block of the gradient
        cfg = MLPConfig(3, (4,), "relu")
        p = init_params(cfg)
        x, y = rng.uniform(-1, 1, (16, 3)), rng.standard_normal(16)
        _, g = loss_and_grad(p, cfg, x, y)
        h = np.maximum(x @ p.weights[0].T + p.biases[0], 0.0)
        w = p.weights[1][0]
        expected = 2 / len(y) * h.T @ (h @ w + p.biases[1][0] - y)
        np.testing.assert_allclose(g.weights[1][0], expected, rtol=1e-12)

    def test_input_gradient_of_linear_path(self, rng):
        # residual blocks with zero weights and tanh(0) = 0 leave only the linear path
        cfg = MLPConfig(2, (3, 3), "tanh", residual=True)
        p = zero_params(cfg)
        p.weights[0][:] = rng.standard_normal((3, 2))
        p.weights[2][:] = rng.standard_normal((1, 3))
        cfg_lin = MLPConfig(2, (3, 3), "tanh", residual=True)
        small = rng.uniform(-1e-4, 1e-4, (3, 2))
        g = predict_grad(p, cfg_lin, small)
        # first layer is tanh; at tiny inputs its derivative is ~1
        np.testing.assert_allclose(g, np.tile(p.weights[2][0] @ p.weights[0], (3, 1)), rtol=1e-6)
        np.testing.assert_array_equal(predict_grad(zero_params(cfg), cfg, small), 0.0)

    def test_empty_batch(self):
        cfg = MLPConfig(2, (3,))
        with pytest.raises(ValueError):
            loss_and_grad(init_params(cfg), cfg, np.zeros((0, 2)), np.zeros(0))


class TestAdam:
    def test_first_step_moves_by_learning_rate(self, rng):
        cfg = MLPConfig(2, (3,))
        p = init_params(cfg)
        g = MLPParams([rng.standard_normal(w.shape) for w in p.weights], [rng.standard_normal(b.shape) for b in p.biases])
        before = p.copy()
        adam_step(p, g, AdamState.zeros_like(p), TrainConfig(learning_rate=0.01, eps=0.0))
        for a, b, gg in zip(p.flat(), before.flat(), g.flat()):
            np.testing.assert_allclose(a - b, -0.01 * np.sign(gg))

    def test_constant_gradient_two_steps(self):
        cfg = MLPConfig(1, (1,))
        p = zero_params(cfg)
        g = MLPParams([np.full((1, 1), 2.0), np.full((1, 1), 2.0)], [np.full(1, 2.0), np.full(1, 2.0)])
        st = AdamState.zeros_like(p)
        tc = TrainConfig(learning_rate=1e-3)
        for _ in range(2):
            before = p.copy()
            adam_step(p, g, st, tc)
            for a, b in zip(p.flat(), before.flat()):
                assert 0.9e-3 <= np.abs(a - b).max() <= 1e-3

    def test_zero_gradient_is_noop(self):
        cfg = MLPConfig(2, (3,))
        p = init_params(cfg)
        before = p.copy()
        st = AdamState.zeros_like(p)
        adam_step(p, zero_params(cfg), st, TrainConfig())
        assert st.step == 1
        for a, b in zip(p.flat(), before.flat()):
            np.testing.assert_array_equal(a, b)

    def test_invalid_train_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestTrain:
    def test_deterministic(self, rng):
        x = rng.uniform(-1, 1, (64, 2))
        data = Dataset(x, x[:, 0] * x[:, 1])
        cfg = MLPConfig(2, (16, 16), "tanh", seed=5)
        a, _ = train(data, cfg, TrainConfig(epochs=3, batch_size=16, seed=5))
        b, _ = train(data, cfg, TrainConfig(epochs=3, batch_size=16, seed=5))
        np.testing.assert_array_equal(a(x), b(x))

    def test_learns_smooth_target(self, rng, tmp_path):
        x = rng.uniform(-1, 1, (512, 2))
        f = lambda z: np.sin(z[:, 0]) + z[:, 1] ** 2
        log = tmp_path / "loss.csv"
        sur, stats = train(Dataset(x, f(x)), MLPConfig(2, (32, 32), "tanh"),
                           TrainConfig(epochs=150, batch_size=32, learning_rate=3e-3), log_path=log)
        hist = stats.extra["loss_history"]
        assert hist[-1] < 0.05 * hist[0]
        xt = rng.uniform(-1, 1, (200, 2))
        assert err2(sur(xt), f(xt)) < 0.05
        lines = log.read_text().splitlines()
        assert lines[0] == "epoch,train_loss" and len(lines) == 151
        assert stats.dofs == sur.dofs

    def test_linear_target(self, rng):
        x = rng.uniform(-1, 1, (1000, 3))
        _, stats = train(Dataset(x, x.sum(axis=1)), MLPConfig(3, (64, 64)), TrainConfig(epochs=200))
        assert stats.err_train_2 <= 1e-2

    def test_zero_target_descends(self, rng):
        x = rng.uniform(-1, 1, (256, 3))
        cfg = MLPConfig(3, (16,), seed=1)
        before = loss_and_grad(init_params(cfg), cfg, x, np.zeros(256))[0]
        sur, _ = train(Dataset(x, np.zeros(256)), cfg, TrainConfig(epochs=1))
        assert loss_and_grad(sur.params, cfg, x, np.zeros(256))[0] < before

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self, rng):
        x = rng.uniform(-1, 1, (32, 2))
        with pytest.raises(FitError):
            train(Dataset(x, np.full(32, np.inf)), MLPConfig(2, (4,)), TrainConfig(epochs=1))

    def test_domain_checked(self):
        cfg = MLPConfig(2, (3,))
        s = MLPSurrogate(init_params(cfg), cfg, domain=np.array([[-1.0, 1.0]] * 2))
        s(np.zeros(2))
        with pytest.raises(DomainError):
            s.grad(np.array([0.0, 1.5]))
