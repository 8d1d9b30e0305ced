import math

import numpy as np
import pytest

from drnet.errors import NumericError, ShapeError
from drnet.optim import (
    AdamState,
    EarlyStopState,
    adam_step,
    binary_cross_entropy,
    categorical_cross_entropy,
    early_stop_update,
    lr_schedule,
)
from drnet.params import NetworkParams
from drnet.tensor import Tape, Tensor


def onehot(labels, k=5):
    out = np.zeros((len(labels), k), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


class TestCategoricalCrossEntropy:
    def test_perfect_prediction_is_near_zero(self):
        probs = np.full((3, 5), 1e-7 / 4, dtype=np.float32)
        probs[:, 2] = 1.0 - 1e-7
        loss = categorical_cross_entropy(Tensor(probs), Tensor(onehot([2, 2, 2]))).item()
        assert 0.0 <= loss < 1e-6

    def test_uniform_prediction_is_ln5(self):
        probs = Tensor(np.full((4, 5), 0.2, dtype=np.float32))
        loss = categorical_cross_entropy(probs, Tensor(onehot([0, 1, 2, 3]))).item()
        assert loss == pytest.approx(math.log(5.0), abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            categorical_cross_entropy(Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 4))))

    def test_softmax_ce_gradient_is_p_minus_y_over_batch(self):
        from drnet.layers import softmax

        rng = np.random.default_rng(0)
        logits = Tensor(rng.normal(size=(6, 5)).astype(np.float64), requires_grad=True)
        y = Tensor(onehot(rng.integers(0, 5, size=6)).astype(np.float64))
        with Tape() as tape:
            p = softmax(logits, axis=1)
            loss = categorical_cross_entropy(p, y)
        tape.backward(loss)
        expected = (p.data - y.data) / 6
        np.testing.assert_allclose(logits.grad, expected, atol=1e-10)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        raw = rng.random((8, 5))
        probs = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
        y = Tensor(onehot(rng.integers(0, 5, size=8)))
        assert categorical_cross_entropy(Tensor(probs), y).item() >= 0.0


class TestBinaryCrossEntropy:
    def test_half_prediction_is_ln2(self):
        pred = Tensor(np.full(10, 0.5, dtype=np.float32))
        target = Tensor((np.arange(10) % 2).astype(np.float32))
        assert binary_cross_entropy(pred, target).item() == pytest.approx(math.log(2.0), abs=1e-6)

    def test_matching_prediction_near_zero(self):
        target = np.array([0.0, 1.0, 1.0, 0.0], dtype=np.float32)
        pred = np.clip(target, 1e-6, 1 - 1e-6)
        loss = binary_cross_entropy(Tensor(pred), Tensor(target)).item()
        assert 0.0 <= loss < 1e-5

    def test_gradient_vs_finite_differences(self):
        from drnet.layers import sigmoid
        from drnet.tensor import grad_check

        rng = np.random.default_rng(2)
        target = Tensor(rng.integers(0, 2, size=8).astype(np.float64))
        err = grad_check(
            lambda t: binary_cross_entropy(sigmoid(t), target),
            Tensor(rng.normal(size=8)),
        )
        assert err < 1e-4


class TestAdam:
    def _single_param(self, value):
        params = NetworkParams()
        params.add("theta", Tensor(np.array([value], dtype=np.float32), requires_grad=True))
        return params

    def test_first_step_hand_value(self):
        params = self._single_param(1.0)
        state = AdamState(params, learning_rate=0.001)
        adam_step(params, {"theta": np.array([2.0], dtype=np.float32)}, state)
        # bias-corrected first step reduces to lr * g / (|g| + eps)
        assert params["theta"].data[0] == pytest.approx(0.999, abs=1e-6)
        assert state.t == 1

    def test_zero_gradient_is_fixed_point(self):
        params = self._single_param(0.7)
        state = AdamState(params, learning_rate=0.01)
        for _ in range(5):
            adam_step(params, {"theta": np.zeros(1, dtype=np.float32)}, state)
        assert params["theta"].data[0] == pytest.approx(0.7)

    def test_converges_on_quadratic(self):
        params = self._single_param(1.0)
        state = AdamState(params, learning_rate=0.01)
        for _ in range(500):
            g = 2.0 * params["theta"].data
            adam_step(params, {"theta": g}, state)
            if abs(params["theta"].data[0]) < 0.01:
                break
        assert abs(params["theta"].data[0]) < 0.01

    def test_non_finite_gradient_names_parameter(self):
        params = self._single_param(1.0)
        state = AdamState(params, learning_rate=0.01)
        with pytest.raises(NumericError) as exc:
            adam_step(params, {"theta": np.array([np.nan], dtype=np.float32)}, state)
        assert "theta" in str(exc.value)


class TestLrSchedule:
    def test_paper_decades(self):
        assert lr_schedule(0.001, 0) == 0.001
        assert lr_schedule(0.001, 9) == 0.001
        assert lr_schedule(0.001, 10) == 0.0001
        assert lr_schedule(0.001, 19) == 0.0001
        assert lr_schedule(0.001, 25) == 1e-5

    def test_piecewise_constant_non_increasing(self):
        values = [lr_schedule(0.001, e) for e in range(40)]
        for a, b in zip(values, values[1:]):
            assert b <= a
        for k in range(4):
            decade = values[10 * k : 10 * k + 10]
            assert len(set(decade)) == 1

    def test_negative_epoch_rejected(self):
        with pytest.raises(ShapeError):
            lr_schedule(0.001, -1)


class TestEarlyStopping:
    def _params(self, value):
        params = NetworkParams()
        params.add("w", Tensor(np.array([value], dtype=np.float32), requires_grad=True))
        return params

    def test_improving_sequence_continues(self):
        params = self._params(0.0)
        state = EarlyStopState(patience=15)
        for loss in (1.0, 0.9, 0.8):
            assert early_stop_update(state, loss, params) == "continue"
        assert state.since_improvement == 0
        assert state.best_loss == pytest.approx(0.8)

    def test_stops_after_patience_plus_one_and_restores_best(self):
        params = self._params(1.0)
        state = EarlyStopState(patience=15)
        early_stop_update(state, 0.5, params)  # best epoch
        best_value = params["w"].data.copy()
        decisions = []
        for i in range(16):
            params["w"].data = params["w"].data + 1.0  # keep "training"
            decisions.append(early_stop_update(state, 0.6 + i * 0.01, params))
        assert decisions[:-1] == ["continue"] * 15
        assert decisions[-1] == "stop"
        np.testing.assert_array_equal(params["w"].data, best_value)

    def test_equal_loss_counts_as_no_improvement(self):
        params = self._params(0.0)
        state = EarlyStopState(patience=15)
        early_stop_update(state, 1.0, params)
        early_stop_update(state, 1.0, params)
        assert state.since_improvement == 1

    def test_non_finite_loss_rejected(self):
        state = EarlyStopState()
        with pytest.raises(NumericError):
            early_stop_update(state, float("nan"), self._params(0.0))

    def test_snapshot_tracks_minimum(self):
        params = self._params(0.0)
        state = EarlyStopState(patience=3)
        losses = [0.9, 0.7, 0.8, 0.6, 0.75]
        for i, loss in enumerate(losses):
            params["w"].data = np.array([float(i)], dtype=np.float32)
            early_stop_update(state, loss, params)
        assert state.best_loss == pytest.approx(0.6)
        np.testing.assert_array_equal(state.best_params["w"].data, [3.0])
