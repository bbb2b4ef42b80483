import numpy as np
import pytest

from sirenrca.nets import (
    FitConfig,
    Mlp,
    SCALE_FLOOR,
    fit_heteroscedastic,
    fit_regression,
    init_mlp,
)


def linear_net(W, b, out="identity"):
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    return Mlp([W.shape[1], W.shape[0]], [W], [b], "tanh", out)


def fd_jacobian(net, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    J = np.zeros((net.out_dim, x.size))
    for j in range(x.size):
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        J[:, j] = (net.forward(up) - net.forward(dn)) / (2 * h)
    return J


class TestForward:
    def test_single_affine_layer(self):
        net = linear_net([[2.0]], [1.0])
        assert net.forward([3.0]) == pytest.approx([7.0])

    def test_zero_weight_outputs(self):
        rng = np.random.default_rng(0)
        net = init_mlp([2, 4, 1], "tanh", "identity", rng)
        for w in net.weights:
            w[:] = 0.0
        assert net.forward([1.0, -2.0]) == pytest.approx([0.0])
        shifted = init_mlp([2, 4, 1], "tanh", "shifted_tanh", rng)
        for w in shifted.weights:
            w[:] = 0.0
        assert shifted.forward([1.0, -2.0]) == pytest.approx([0.5])

    def test_repeated_call_deterministic(self):
        net = init_mlp([3, 8, 2], "swish", "identity", np.random.default_rng(1))
        x = [0.3, -1.2, 0.8]
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_dimension_mismatch(self):
        net = linear_net([[2.0, 3.0]], [0.0])
        with pytest.raises(ValueError):
            net.forward([1.0])


class TestInputJacobian:
    def test_linear_layer_jacobian(self):
        net = linear_net([[2.0, 3.0]], [0.5])
        assert np.allclose(net.input_jacobian([9.0, -4.0]), [[2.0, 3.0]])

    def test_tanh_net_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        net = init_mlp([3, 16, 2], "tanh", "identity", rng)
        x = rng.normal(size=3)
        assert np.abs(net.input_jacobian(x) - fd_jacobian(net, x)).max() < 1e-6

    def test_relu_positive_region_is_weight_product(self):
        W1 = np.array([[1.0, 0.5], [0.2, 1.0]])
        W2 = np.array([[1.5, -0.5]])
        net = Mlp([2, 2, 1], [W1, W2], [np.array([3.0, 3.0]), np.array([0.0])], "relu")
        x = np.array([0.2, 0.1])  # all pre-activations positive
        assert net.input_jacobian(x) == pytest.approx(W2 @ W1)

    def test_finite_difference_agreement_at_random_points(self):
        rng = np.random.default_rng(3)
        for activation in ("tanh", "swish"):
            net = init_mlp([4, 20, 20, 3], activation, "identity", rng)
            for _ in range(100):
                x = rng.normal(size=4)
                err = np.abs(net.input_jacobian(x) - fd_jacobian(net, x)).max()
                assert err < 1e-5

    def test_standardized_net_jacobian(self):
        rng = np.random.default_rng(4)
        net = init_mlp([2, 10, 1], "tanh", "identity", rng)
        net.x_mean = np.array([1.0, -2.0])
        net.x_std = np.array([2.0, 0.5])
        net.y_mean = np.array([3.0])
        net.y_std = np.array([4.0])
        x = rng.normal(size=2)
        assert np.abs(net.input_jacobian(x) - fd_jacobian(net, x)).max() < 1e-6

    def test_batch_jacobian_matches_loop(self):
        rng = np.random.default_rng(5)
        net = init_mlp([3, 12, 2], "swish", "identity", rng)
        X = rng.normal(size=(7, 3))
        batched = net.input_jacobian_batch(X)
        for i in range(7):
            assert batched[i] == pytest.approx(net.input_jacobian(X[i]))


class TestFitRegression:
    def test_recovers_linear_slope(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-2, 2, size=(500, 1))
        y = 2 * x[:, 0] + rng.normal(0, 0.01, 500)
        net = fit_regression(x, y, FitConfig(seed=1))
        h = 1e-4
        for g in np.linspace(-1.2, 1.2, 9):
            slope = (net.forward([g + h])[0] - net.forward([g - h])[0]) / (2 * h)
            assert 1.9 <= slope <= 2.1

    def test_constant_targets(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-2, 2, size=(200, 1))
        net = fit_regression(x, np.full(200, 3.7), FitConfig(seed=2, epochs=100))
        preds = net.forward_batch(np.linspace(-2, 2, 15).reshape(-1, 1))[:, 0]
        assert np.abs(preds - 3.7).max() < 0.05

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError):
            fit_regression(np.zeros((10, 1)), np.zeros(10), FitConfig(epochs=0))

    def test_seed_gives_bit_identical_parameters(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(100, 2))
        y = x[:, 0] - x[:, 1]
        cfg = FitConfig(seed=5, epochs=30)
        a = fit_regression(x, y, cfg)
        b = fit_regression(x, y, cfg)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(a.biases, b.biases):
            assert np.array_equal(ba, bb)

    def test_loss_trend_non_increasing(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(400, 2))
        y = np.sin(x[:, 0]) + 0.5 * x[:, 1] + rng.normal(0, 0.05, 400)
        net = fit_regression(x, y, FitConfig(seed=3))
        losses = np.array(net.training_loss)
        # trend over ten consecutive blocks; single-epoch bounces tolerated
        blocks = np.array([b.mean() for b in np.array_split(losses, 10)])
        assert np.all(blocks[1:] <= blocks[:-1] * 1.05)
        assert losses[-1] < losses[0]

    def test_minibatch_path_used_for_large_data(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(3000, 1))
        y = 0.5 * x[:, 0]
        net = fit_regression(x, y, FitConfig(seed=4, epochs=3))
        assert len(net.training_loss) == 3


class TestFitHeteroscedastic:
    def test_scale_tracks_input_dependent_noise(self):
        rng = np.random.default_rng(20)
        x = rng.uniform(0.5, 1.5, size=(1000, 1))
        y = x[:, 0] * rng.normal(0, 1, 1000)
        _, scale_net = fit_heteroscedastic(x, y, FitConfig(seed=6))
        grid = np.linspace(0.55, 1.45, 12).reshape(-1, 1)
        sig = scale_net.forward_batch(grid)[:, 0]
        from scipy.stats import spearmanr

        assert spearmanr(grid[:, 0], sig).statistic > 0.8

    def test_homoscedastic_scale_recovered(self):
        rng = np.random.default_rng(21)
        x = rng.uniform(0.5, 1.5, size=(1000, 1))
        y = 1.5 * x[:, 0] + rng.normal(0, 0.3, 1000)
        _, scale_net = fit_heteroscedastic(x, y, FitConfig(seed=7))
        grid = np.linspace(0.55, 1.45, 12).reshape(-1, 1)
        sig = scale_net.forward_batch(grid)[:, 0]
        assert np.all(sig >= 0.2) and np.all(sig <= 0.4)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            fit_heteroscedastic(np.zeros((0, 1)), np.zeros(0))

    def test_scale_floor_constant(self):
        assert SCALE_FLOOR == pytest.approx(1e-3)


class TestPersistence:
    def test_json_round_trip_preserves_outputs(self):
        rng = np.random.default_rng(30)
        net = init_mlp([3, 9, 2], "swish", "shifted_tanh", rng)
        net.x_mean = rng.normal(size=3)
        net.x_std = np.abs(rng.normal(size=3)) + 0.5
        clone = Mlp.from_json(net.to_json())
        X = rng.normal(size=(5, 3))
        assert np.array_equal(net.forward_batch(X), clone.forward_batch(X))

    def test_fitted_net_round_trip(self):
        rng = np.random.default_rng(31)
        x = rng.normal(size=(120, 2))
        y = x[:, 0] * 2 + 1
        net = fit_regression(x, y, FitConfig(seed=8, epochs=50))
        clone = Mlp.from_json(net.to_json())
        assert np.array_equal(net.forward_batch(x), clone.forward_batch(x))


def test_non_finite_parameters_rejected():
    with pytest.raises(ValueError):
        Mlp([1, 1], [np.array([[np.nan]])], [np.zeros(1)])
