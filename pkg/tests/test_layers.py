import numpy as np
import pytest
from scipy.special import expit

from helpers import numeric_gradient, relative_error
from services.errors import NumericError, ShapeError
from services.layers import (
    CellState,
    conv1d,
    conv1d_backward,
    dense_softmax,
    global_maxpool,
    init_recurrent_params,
    maxpool1d,
    maxpool1d_backward,
    recurrent_cell_step,
    run_recurrent,
    run_recurrent_backward,
    spatial_dropout,
)


def _seq(values):
    return np.asarray(values, dtype=np.float64)[None, :, None]


class TestConv:
    def test_hand_dot_product(self):
        out, cache = conv1d(_seq([1, 2, 3]), np.array([[[1.0], [0.0], [-1.0]]]), np.zeros(1))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 0.0
        assert cache[2][0, 0, 0] == -2.0

    @pytest.mark.parametrize("bias", [-0.5, 0.0, 1.5])
    def test_zero_input(self, bias):
        out, _ = conv1d(np.zeros((2, 5, 3)), np.ones((4, 2, 3)), np.full(4, bias))
        np.testing.assert_array_equal(out, np.full((2, 4, 4), max(bias, 0.0)))

    def test_too_short(self):
        with pytest.raises(ShapeError):
            conv1d(np.zeros((1, 2, 1)), np.zeros((1, 3, 1)), np.zeros(1))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 6, 3))
        kernels = rng.normal(size=(2, 3, 3))
        bias = rng.normal(size=2)
        upstream = rng.normal(size=(2, 4, 2))

        def loss():
            return float(np.sum(conv1d(x, kernels, bias)[0] * upstream))

        _, cache = conv1d(x, kernels, bias)
        dx, dk, db = conv1d_backward(upstream, cache)
        assert relative_error(dx, numeric_gradient(loss, x)) < 1e-6
        assert relative_error(dk, numeric_gradient(loss, kernels)) < 1e-6
        assert relative_error(db, numeric_gradient(loss, bias)) < 1e-6


class TestPooling:
    def test_pairs(self):
        assert maxpool1d(_seq([1, 3, 2, 5]), 2)[0].ravel().tolist() == [3.0, 5.0]

    def test_constant(self):
        assert maxpool1d(_seq([7, 7, 7, 7]), 2)[0].ravel().tolist() == [7.0, 7.0]

    def test_remainder_dropped(self):
        assert maxpool1d(_seq([1, 3, 2, 5, 9]), 2)[0].ravel().tolist() == [3.0, 5.0]

    def test_too_short(self):
        with pytest.raises(ShapeError):
            maxpool1d(_seq([1]), 2)

    def test_backward_routes_to_first_max(self):
        _, cache = maxpool1d(_seq([7, 7, 1, 4]), 2)
        dx = maxpool1d_backward(np.ones((1, 2, 1)), cache)
        assert dx.ravel().tolist() == [1.0, 0.0, 0.0, 1.0]

    def test_global(self):
        out, _ = global_maxpool(np.array([[[1.0, 9.0], [4.0, 2.0], [3.0, 5.0]]]))
        assert out.tolist() == [[[4.0, 9.0]]]


class TestRecurrentCell:
    @pytest.mark.parametrize("kind", ["LSTM", "GRU"])
    def test_zero_fixed_point(self, kind):
        params = {k: np.zeros_like(v) for k, v in init_recurrent_params(kind, 3, 4, np.random.default_rng(0)).items()}
        state = CellState(np.zeros((2, 4)), np.zeros((2, 4)) if kind == "LSTM" else None)
        new_state, _ = recurrent_cell_step(kind, np.ones((2, 3)), state, params)
        np.testing.assert_array_equal(new_state.h, np.zeros((2, 4)))

    def test_forget_bias_carries_cell(self):
        units = 2
        params = {"W": np.zeros((3 + units, 4 * units)), "b": np.zeros(4 * units)}
        params["b"][:units] = 0.3
        params["b"][units:2 * units] = 10.0
        params["b"][3 * units:] = 0.7
        c = np.array([[0.5, -0.25]])
        new_state, _ = recurrent_cell_step("LSTM", np.ones((1, 3)), CellState(np.zeros((1, units)), c), params)
        expected = expit(0.3) * np.tanh(0.7) + c
        np.testing.assert_allclose(new_state.c, expected, atol=1e-4)

    def test_non_finite_state(self):
        params = init_recurrent_params("GRU", 2, 2, np.random.default_rng(0))
        with pytest.raises(NumericError):
            recurrent_cell_step("GRU", np.ones((1, 2)), CellState(np.full((1, 2), np.nan)), params)

    def test_unknown_kind(self):
        with pytest.raises(ShapeError):
            run_recurrent("RNN", False, np.zeros((1, 2, 2)), {})


class TestRecurrentUnroll:
    def test_single_step_equals_cell(self):
        rng = np.random.default_rng(1)
        params = init_recurrent_params("LSTM", 3, 2, rng)
        x = rng.normal(size=(2, 1, 3))
        out, _ = run_recurrent("LSTM", False, x, params)
        state, _ = recurrent_cell_step("LSTM", x[:, 0], CellState(np.zeros((2, 2)), np.zeros((2, 2))), params)
        np.testing.assert_allclose(out[:, 0], state.h)

    @pytest.mark.parametrize("kind", ["LSTM", "GRU"])
    def test_bidirectional_width(self, kind):
        rng = np.random.default_rng(2)
        fw = init_recurrent_params(kind, 3, 5, rng)
        bw = init_recurrent_params(kind, 3, 5, rng)
        x = rng.normal(size=(2, 4, 3))
        assert run_recurrent(kind, False, x, fw)[0].shape == (2, 4, 5)
        assert run_recurrent(kind, True, x, fw, bw)[0].shape == (2, 4, 10)

    @pytest.mark.parametrize("kind", ["LSTM", "GRU"])
    def test_palindrome_with_tied_directions(self, kind):
        rng = np.random.default_rng(3)
        params = {k: v * 10 for k, v in init_recurrent_params(kind, 2, 3, rng).items()}
        half = rng.normal(size=(1, 3, 2))
        x = np.concatenate([half, half[:, ::-1]], axis=1)
        out, _ = run_recurrent(kind, True, x, params, params)
        np.testing.assert_allclose(out[:, :, 3:], out[:, ::-1, :3], atol=1e-12)

    @pytest.mark.parametrize("kind", ["LSTM", "GRU"])
    @pytest.mark.parametrize("bidirectional", [False, True])
    def test_gradient_through_five_steps(self, kind, bidirectional):
        rng = np.random.default_rng(4)
        fw = {k: v * 10 for k, v in init_recurrent_params(kind, 3, 2, rng).items()}
        bw = {k: v * 10 for k, v in init_recurrent_params(kind, 3, 2, rng).items()} if bidirectional else None
        x = rng.normal(size=(2, 5, 3))
        upstream = rng.normal(size=(2, 5, 4 if bidirectional else 2))

        def loss():
            return float(np.sum(run_recurrent(kind, bidirectional, x, fw, bw)[0] * upstream))

        _, cache = run_recurrent(kind, bidirectional, x, fw, bw)
        fw_grads = {k: np.zeros_like(v) for k, v in fw.items()}
        bw_grads = {k: np.zeros_like(v) for k, v in bw.items()} if bidirectional else None
        dx = run_recurrent_backward(upstream, cache, fw, fw_grads, bw, bw_grads)

        assert relative_error(dx, numeric_gradient(loss, x)) < 1e-4
        for name in fw:
            assert relative_error(fw_grads[name], numeric_gradient(loss, fw[name])) < 1e-4
        if bidirectional:
            for name in bw:
                assert relative_error(bw_grads[name], numeric_gradient(loss, bw[name])) < 1e-4


class TestSpatialDropout:
    def test_rate_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 4))
        out, mask = spatial_dropout(x, 0.0, True, np.random.default_rng(1))
        assert out is x and mask is None

    def test_inference_is_identity(self):
        x = np.ones((2, 3, 4))
        assert spatial_dropout(x, 0.5, False)[0] is x

    def test_drops_whole_channels(self):
        x = np.ones((1, 7, 10_000))
        out, _ = spatial_dropout(x, 0.5, True, np.random.default_rng(5))
        kept = out[0, 0] != 0
        assert np.all((out[0] != 0) == kept)
        np.testing.assert_array_equal(out[0][:, kept], 2.0)
        assert abs(kept.mean() - 0.5) < 0.05

    def test_rejects_rate_one(self):
        with pytest.raises(ShapeError):
            spatial_dropout(np.ones((1, 1, 1)), 1.0, True)


class TestDenseSoftmax:
    def _identity_head(self):
        eye = np.eye(2)
        return eye, np.zeros(2), eye, np.zeros(2)

    def test_symmetric(self):
        np.testing.assert_allclose(dense_softmax(np.zeros(2), *self._identity_head()), [0.5, 0.5])

    def test_large_logit_is_stable(self):
        probs = dense_softmax(np.array([1000.0, 0.0]), *self._identity_head())
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)
        assert probs[1] == pytest.approx(0.0, abs=1e-300)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-10, 10, size=(50, 6))
        probs = dense_softmax(x, rng.normal(size=(6, 5)), rng.normal(size=5), rng.normal(size=(5, 3)), rng.normal(size=3))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((probs >= 0) & (probs <= 1))
