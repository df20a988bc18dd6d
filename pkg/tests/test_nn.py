"""MLP engine: forward/backward math, optimizers, fit loop, serialization."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmoe import nn
from flowmoe.errors import FormatError, TrainingError

import helpers


def small_batch(rng, n=32, d=16):
    x = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n)
    return x, y


class TestInit:
    def test_shapes_and_zero_biases(self):
        model = nn.mlp_init([4, 2], seed=7)
        assert [w.shape for w in model.weights] == [(2, 4)]
        assert all(np.all(b == 0.0) for b in model.biases)

    def test_deterministic(self):
        a = nn.mlp_init([5, 8, 2], seed=3)
        b = nn.mlp_init([5, 8, 2], seed=3)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)

    def test_seed_changes_weights(self):
        a = nn.mlp_init([5, 8, 2], seed=3)
        b = nn.mlp_init([5, 8, 2], seed=4)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_too_few_dims_rejected(self):
        with pytest.raises(ValueError):
            nn.mlp_init([4], seed=0)

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError):
            nn.mlp_init([4, 0, 2], seed=0)


class TestForward:
    def test_zero_weights_give_uniform_probs(self, rng):
        model = helpers.forced_mlp(6, [0.0, 0.0])
        p = nn.mlp_forward(model, rng.normal(size=(10, 6)))
        assert np.allclose(p, 0.5, atol=0)

    def test_output_shape(self, rng):
        model = nn.mlp_init([6, 12, 2], seed=0)
        p = nn.mlp_forward(model, rng.normal(size=(17, 6)))
        assert p.shape == (17, 2)

    def test_single_layer_matches_manual_softmax(self):
        # weights (fan_out, fan_in): logits for x are W @ x + b
        model = nn.mlp_init([2, 2], seed=0)
        model.weights[0] = np.array([[0.3, -1.1], [0.7, 0.25]])
        model.biases[0] = np.array([0.05, -0.4])
        x = np.array([[1.5, -0.5], [0.0, 2.0]])
        logits = x @ model.weights[0].T + model.biases[0]
        expected = helpers.manual_softmax(logits)
        assert np.max(np.abs(nn.mlp_forward(model, x) - expected)) < 1e-12

    def test_relu_zeroes_negative_hidden_units(self):
        model = nn.mlp_init([1, 1, 2], seed=0)
        model.weights[0] = np.array([[1.0]])
        model.weights[1] = np.array([[2.0], [0.0]])
        # hidden = relu(x); negative inputs must give uniform output
        p = nn.mlp_forward(model, np.array([[-3.0]]))
        assert np.allclose(p, 0.5, atol=0)
        p = nn.mlp_forward(model, np.array([[3.0]]))
        assert p[0, 0] > 0.99

    def test_batch_size_independence(self, rng):
        model = nn.mlp_init([8, 16, 2], seed=5)
        x = rng.normal(size=(103, 8))
        full = nn.mlp_forward(model, x)
        for bs in (1, 7, 64, 1000):
            assert np.max(np.abs(nn.mlp_forward(model, x, batch_size=bs) - full)) < 1e-9


class TestSoftmaxAndLoss:
    def test_softmax_hand_values(self):
        z = np.array([[0.3, -0.2]])
        expected = helpers.manual_softmax(z)
        assert np.max(np.abs(nn.softmax(z) - expected)) < 1e-12

    def test_softmax_shift_invariance(self):
        z = np.array([[1.0, 2.0, 3.0]])
        assert np.max(np.abs(nn.softmax(z) - nn.softmax(z + 1000.0))) < 1e-12

    def test_softmax_overflow_safe(self):
        p = nn.softmax(np.array([[1e4, -1e4]]))
        assert np.isfinite(p).all()
        assert abs(p.sum() - 1.0) < 1e-12

    def test_cross_entropy_uniform_is_ln2(self):
        losses = nn.cross_entropy(np.array([[0.5, 0.5]]), np.array([1]))
        assert abs(losses[0] - math.log(2.0)) < 1e-12

    def test_cross_entropy_confident_wrong(self):
        losses = nn.cross_entropy(np.array([[0.9, 0.1]]), np.array([1]))
        assert abs(losses[0] - (-math.log(0.1))) < 1e-12

    def test_cross_entropy_clamped_at_zero_prob(self):
        losses = nn.cross_entropy(np.array([[1.0, 0.0]]), np.array([1]))
        assert np.isfinite(losses[0])
        assert abs(losses[0] - (-math.log(1e-12))) < 1e-9

    def test_mean_cross_entropy_weighted(self):
        probs = np.array([[0.9, 0.1], [0.5, 0.5]])
        labels = np.array([0, 1])
        w = np.array([3.0, 1.0])
        expected = (3.0 * -math.log(0.9) + 1.0 * math.log(2.0)) / 4.0
        assert abs(nn.mean_cross_entropy(probs, labels, w) - expected) < 1e-12

    @given(
        st.lists(
            st.lists(st.floats(-50, 50), min_size=3, max_size=3),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_softmax_rows_are_distributions(self, rows):
        p = nn.softmax(np.array(rows))
        assert np.all(p >= 0.0)
        assert np.max(np.abs(p.sum(axis=1) - 1.0)) < 1e-9


class TestGradients:
    def test_finite_difference_agreement(self, rng):
        model = nn.mlp_init([16, 32, 2], seed=1)
        x, y = small_batch(rng)
        start = time.perf_counter()
        worst = nn.gradient_check(model, x, y, n_params=500)
        assert worst < 1e-4
        assert time.perf_counter() - start < 5.0

    def test_finite_difference_after_some_training(self, rng):
        # check again at a non-initial point in parameter space
        model = nn.mlp_init([16, 32, 2], seed=1)
        x, y = small_batch(rng)
        nn.fit(model, x, y, nn.TrainConfig(epochs=5, seed=0))
        assert nn.gradient_check(model, x, y, n_params=200) < 1e-4

    def test_duplicated_batch_same_gradient(self, rng):
        model = nn.mlp_init([6, 10, 2], seed=2)
        x, y = small_batch(rng, n=16, d=6)
        g1, loss1 = nn.mlp_backward(model, x, y)
        g2, loss2 = nn.mlp_backward(model, np.vstack([x, x]), np.concatenate([y, y]))
        assert abs(loss1 - loss2) < 1e-12
        for (w1, b1), (w2, b2) in zip(g1, g2):
            assert np.max(np.abs(w1 - w2)) < 1e-12
            assert np.max(np.abs(b1 - b2)) < 1e-12

    def test_input_gradient_finite_difference(self, rng):
        model = nn.mlp_init([5, 9, 2], seed=4)
        x, y = small_batch(rng, n=8, d=5)
        acts, probs = nn.forward_cache(model, x)
        _, dx = nn.backward_cache(model, acts, nn.ce_dlogits(probs, y), need_input_grad=True)
        h = 1e-6
        for i, j in [(0, 0), (3, 2), (7, 4)]:
            xp = x.copy()
            xp[i, j] += h
            up = nn.mean_cross_entropy(nn.mlp_forward(model, xp), y)
            xp[i, j] -= 2 * h
            down = nn.mean_cross_entropy(nn.mlp_forward(model, xp), y)
            fd = (up - down) / (2 * h)
            assert abs(dx[i, j] - fd) / max(abs(fd), 1e-8) < 1e-4


class TestOptimizers:
    def scalar_model(self, value=1.0):
        model = nn.mlp_init([1, 2], seed=0)
        model.weights[0][:] = value
        return model

    def test_sgd_hand_step(self):
        model = self.scalar_model(1.0)
        grads = [(np.ones((2, 1)), np.zeros(2))]
        nn.sgd_step(model, grads, learning_rate=0.1)
        assert np.allclose(model.weights[0], 0.9, atol=1e-15)

    def test_zero_learning_rate_is_identity(self):
        model = self.scalar_model(1.0)
        before = model.weights[0].copy()
        nn.sgd_step(model, [(np.ones((2, 1)), np.ones(2))], learning_rate=0.0)
        assert np.array_equal(model.weights[0], before)

    def test_zero_gradient_is_identity(self):
        model = self.scalar_model(0.7)
        before = model.weights[0].copy()
        nn.sgd_step(model, [(np.zeros((2, 1)), np.zeros(2))], learning_rate=0.5)
        assert np.array_equal(model.weights[0], before)

    def test_adam_first_step_magnitude(self):
        # bias-corrected first step is lr * g / (|g| + eps), about lr per coord
        model = self.scalar_model(1.0)
        state = nn.AdamState(learning_rate=0.01)
        nn.adam_step(model, [(np.full((2, 1), 5.0), np.zeros(2))], state)
        assert np.allclose(model.weights[0], 1.0 - 0.01, atol=1e-6)

    def test_nan_gradient_raises(self):
        model = self.scalar_model(1.0)
        bad = [(np.array([[np.nan], [0.0]]), np.zeros(2))]
        with pytest.raises(TrainingError):
            nn.sgd_step(model, bad, learning_rate=0.1)
        with pytest.raises(TrainingError):
            nn.adam_step(model, bad, nn.AdamState())

    def test_unknown_optimizer_rejected(self):
        with pytest.raises(ValueError):
            nn.Optimizer(nn.TrainConfig(optimizer="momentum"))


class TestFit:
    def separable(self, rng, n=200):
        y = rng.integers(0, 2, size=n)
        x = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, 2.0, -2.0)
        return x, y

    def test_loss_decreases_on_separable_data(self, rng):
        x, y = self.separable(rng)
        model = nn.mlp_init([2, 8, 2], seed=0)
        history = nn.fit(model, x, y, nn.TrainConfig(learning_rate=1e-2, epochs=12, seed=0))
        smooth = np.convolve(history, np.ones(3) / 3, mode="valid")
        assert np.all(np.diff(smooth) < 0)
        assert history[-1] < history[0]

    def test_fit_reaches_high_accuracy(self, rng):
        x, y = self.separable(rng)
        model = nn.mlp_init([2, 8, 2], seed=0)
        nn.fit(model, x, y, nn.TrainConfig(learning_rate=1e-2, epochs=60, seed=0))
        assert helpers.accuracy(np.argmax(nn.mlp_forward(model, x), axis=1), y) >= 0.95

    def test_minibatch_path_used_above_limit(self, rng):
        x, y = self.separable(rng, n=64)
        a = nn.mlp_init([2, 4, 2], seed=1)
        b = nn.mlp_init([2, 4, 2], seed=1)
        nn.fit(a, x, y, nn.TrainConfig(epochs=2, seed=0, full_batch_limit=1, batch_size=16))
        nn.fit(b, x, y, nn.TrainConfig(epochs=2, seed=0))
        # four quarter-batch steps per epoch differ from one full step
        assert not np.array_equal(a.weights[0], b.weights[0])


class TestSerialization:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        model = nn.mlp_init([7, 13, 2], seed=9)
        nn.fit(model, rng.normal(size=(30, 7)), rng.integers(0, 2, size=30),
               nn.TrainConfig(epochs=3, seed=0))
        path = tmp_path / "expert.fmoe"
        nn.save_model(model, path)
        loaded = nn.load_model(path)
        assert loaded.layer_dims == model.layer_dims
        assert loaded.activation == model.activation
        for wa, wb in zip(loaded.weights, model.weights):
            assert np.array_equal(wa, wb)
        for ba, bb in zip(loaded.biases, model.biases):
            assert np.array_equal(ba, bb)

    def test_bad_magic_rejected(self):
        blob = nn.model_to_bytes(nn.mlp_init([3, 2], seed=0))
        with pytest.raises(FormatError):
            nn.model_from_bytes(b"XXXX" + blob[4:])

    def test_bad_version_rejected(self):
        import struct

        blob = bytearray(nn.model_to_bytes(nn.mlp_init([3, 2], seed=0)))
        blob[4:8] = struct.pack("<I", 999)
        with pytest.raises(FormatError):
            nn.model_from_bytes(bytes(blob))

    def test_truncated_rejected(self):
        blob = nn.model_to_bytes(nn.mlp_init([3, 2], seed=0))
        with pytest.raises(FormatError):
            nn.model_from_bytes(blob[:-3])

    def test_trailing_garbage_rejected(self):
        blob = nn.model_to_bytes(nn.mlp_init([3, 2], seed=0))
        with pytest.raises(FormatError):
            nn.model_from_bytes(blob + b"\x00")
