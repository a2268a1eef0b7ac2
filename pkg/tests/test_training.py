import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import sinusoid_series
from tfdnet.blocks import LinearBaseline, ModelConfig, TFDNet
from tfdnet.data import WindowDataset, prepare
from tfdnet.tensor import NonFiniteError, Tensor, backward, grad_check
from tfdnet.training import (Adam, TrainConfig, TrainingDiverged, TrainState, clip_grad_norm,
                             cosine_lr, evaluate, evaluate_predictor, l2_loss, mixture_loss,
                             persistence_forecast, train_loop, write_history)


def _scalar_mixture(e):
    a = math.tanh(abs(e))
    return a * abs(e) + (1 - a) * e * e


class TestMixtureLoss:
    def test_zero_error(self):
        rep = mixture_loss(Tensor(np.ones((2, 3))), np.ones((2, 3)))
        assert rep.total == 0.0 and rep.l1_component == 0.0 and rep.l2_component == 0.0

    def test_unit_error_is_exactly_one(self):
        assert mixture_loss(Tensor([1.0]), [0.0]).total == 1.0

    def test_half_error(self):
        rep = mixture_loss(Tensor([0.5]), [0.0])
        assert rep.total == pytest.approx(0.365529, abs=1e-5)
        assert rep.mean_alpha == pytest.approx(0.462117, abs=1e-6)

    def test_matches_scalar_formula(self, rng):
        pred, target = rng.standard_normal((3, 7)) * 2, rng.standard_normal((3, 7))
        ref = np.mean([_scalar_mixture(e) for e in (pred - target).ravel()])
        assert mixture_loss(Tensor(pred), target).total == pytest.approx(ref, rel=1e-14)

    def test_gradient_vanishes_at_zero_error(self):
        p = Tensor(np.zeros(4), True)
        backward(mixture_loss(p, np.zeros(4)).loss)
        np.testing.assert_array_equal(p.grad, 0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p = Tensor(rng.standard_normal((2, 5)) * 2, True)
        target = rng.standard_normal((2, 5))
        assert grad_check(lambda: mixture_loss(p, target).loss, [p]) < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-1, 1)))
    def test_below_mae_for_small_errors(self, e):
        rep = mixture_loss(Tensor(e), np.zeros(6))
        assert rep.total <= np.mean(np.abs(e)) + 1e-15
        assert rep.total >= 0

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(1, 50)), arrays(np.bool_, 6))
    def test_above_mae_for_large_errors(self, mag, flip):
        e = np.where(flip, -mag, mag)
        assert mixture_loss(Tensor(e), np.zeros(6)).total >= np.mean(np.abs(e)) - 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-15, 15).filter(lambda v: abs(v) > 1e-6)))
    def test_mean_alpha_in_open_interval(self, e):
        assert 0.0 < mixture_loss(Tensor(e), np.zeros(5)).mean_alpha < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mixture_loss(Tensor(np.zeros(3)), np.zeros(4))

    def test_nan_rejected(self):
        with pytest.raises(NonFiniteError):
            mixture_loss(Tensor([np.nan]), [0.0])

    def test_l2(self):
        assert l2_loss(Tensor([0.5, -1.5]), [0.0, 0.0]).total == pytest.approx(1.25)


class TestAdam:
    def _one(self, value, name="p"):
        p = Tensor(np.array([value]), True, name)
        return p

    def test_first_step(self):
        p = self._one(1.0)
        opt = Adam([("p", p)], TrainState())
        p.grad = np.array([1.0])
        opt.step(0.1)
        # m_hat = 1 and v_hat = 1 after bias correction
        assert p.data[0] == 1.0 - 0.1 / (1.0 + 1e-8)

    def test_hand_trace(self):
        p = self._one(0.0)
        state = TrainState()
        opt = Adam([("p", p)], state)
        m = v = 0.0
        x = 0.0
        for t, g in enumerate([1.0, -2.0, 0.5], start=1):
            p.grad = np.array([g])
            opt.step(0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            assert p.data[0] == pytest.approx(x, abs=1e-15)
        assert state.step == 3

    def test_zero_gradient_leaves_params(self):
        p = self._one(2.5)
        opt = Adam([("p", p)], TrainState())
        for _ in range(3):
            p.grad = np.zeros(1)
            opt.step(0.1)
        assert p.data[0] == 2.5

    def test_identical_trajectories(self):
        a, b = self._one(1.0, "a"), self._one(1.0, "b")
        opt = Adam([("a", a), ("b", b)], TrainState())
        for g in (0.3, -1.0, 2.0):
            a.grad = b.grad = np.array([g])
            opt.step(0.05)
            assert a.data[0] == b.data[0]

    def test_moment_shapes(self):
        p = Tensor(np.zeros((2, 3)), True, "w")
        state = TrainState()
        Adam([("w", p)], state)
        assert state.first_moment["w"].shape == (2, 3) == state.second_moment["w"].shape

    def test_missing_and_nonfinite_gradients(self):
        p = self._one(0.0)
        opt = Adam([("p", p)], TrainState())
        with pytest.raises(ValueError):
            opt.step(0.1)
        p.grad = np.array([np.inf])
        with pytest.raises(NonFiniteError):
            opt.step(0.1)
        assert p.data[0] == 0.0


class TestSchedule:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 0.2) == 0.2
        assert cosine_lr(100, 100, 0.2) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(50, 100, 0.2) == pytest.approx(0.1, abs=1e-16)

    def test_monotone(self):
        lrs = [cosine_lr(s, 37, 1.0) for s in range(38)]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            cosine_lr(11, 10, 1.0)


class TestClip:
    def test_global_norm(self):
        a, b = Tensor([0.0], True), Tensor([0.0, 0.0], True)
        a.grad, b.grad = np.array([3.0]), np.array([0.0, 4.0])
        assert clip_grad_norm([a, b], 1.0) == 5.0
        assert np.sqrt(a.grad[0] ** 2 + b.grad[1] ** 2) == pytest.approx(1.0)

    def test_small_norm_untouched(self):
        a = Tensor([0.0], True)
        a.grad = np.array([0.5])
        clip_grad_norm([a], 1.0)
        assert a.grad[0] == 0.5


def _sinusoid_windows(channels=1, periods=(24,), n=1300, L=96, T=24, seed=0):
    prep = prepare(sinusoid_series(n, periods, noise=0.1, channels=channels, seed=seed), (0.7, 0.1, 0.2))
    return [prep.windows(s, L, T) for s in ("train", "val", "test")]


def _small_model(L=96, T=24, D=1, seed=0):
    return TFDNet(ModelConfig(seq_len=L, pred_len=T, n_channels=D, scales=[16], strides=[8]), seed=seed)


class TestTrainLoop:
    def test_learns_a_sinusoid(self):
        train, val, test = _sinusoid_windows(n=1500)
        model = _small_model()
        result = train_loop(model, train, val, TrainConfig(epochs=50, batch_size=32, seed=0))
        mse = evaluate(model, test).mse
        naive = evaluate_predictor(lambda x: persistence_forecast(x, 24), test).mse
        assert mse < 0.05
        assert mse < naive
        assert 1 <= result.best_epoch <= len(result.history) <= 50

    def test_zero_learning_rate(self):
        train, val, _ = _sinusoid_windows()
        model = _small_model()
        before = model.state_dict()
        result = train_loop(model, train, val, TrainConfig(lr=0.0, epochs=3, batch_size=64))
        for name, arr in model.state_dict().items():
            np.testing.assert_array_equal(arr, before[name])
        vals = [h["val_loss"] for h in result.history]
        assert len(set(vals)) == 1

    def test_bitwise_repeatable(self, tmp_path):
        train, val, _ = _sinusoid_windows()
        paths = []
        for k in range(2):
            result = train_loop(_small_model(), train, val, TrainConfig(epochs=3, batch_size=64, seed=7))
            paths.append(tmp_path / f"h{k}.csv")
            write_history(paths[-1], result.history)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_early_stopping_and_best_restore(self):
        train, val, _ = _sinusoid_windows()
        model = _small_model()
        cfg = TrainConfig(lr=0.05, epochs=40, patience=2, batch_size=64, seed=1)
        result = train_loop(model, train, val, cfg)
        best = min(h["val_loss"] for h in result.history)
        assert result.history[result.best_epoch - 1]["val_loss"] == best
        assert result.state.epochs_since_improvement <= cfg.patience
        for name, arr in model.state_dict().items():
            np.testing.assert_array_equal(arr, result.best_state[name])

    def test_linear_baseline_trains(self):
        train, val, test = _sinusoid_windows()
        model = LinearBaseline(96, 24, seed=0)
        train_loop(model, train, val, TrainConfig(epochs=5, batch_size=32, lr=5e-3, loss="l2"))
        assert evaluate(model, test).mse < evaluate_predictor(lambda x: persistence_forecast(x, 24), test).mse

    def test_divergence_reported(self):
        train, val, _ = _sinusoid_windows()
        train.inputs[0, 0, 5] = 1e300
        with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match="epoch 1"):
            train_loop(_small_model(), train, val, TrainConfig(epochs=1, batch_size=train.inputs.shape[0]))

    @pytest.mark.parametrize("kw", [dict(loss="huber"), dict(lr=-1.0), dict(batch_size=0),
                                    dict(clip=0.0)])
    def test_config_rejected(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()


class TestEvaluate:
    def _data(self, rng, n=5, D=2, L=4, T=3):
        return WindowDataset(rng.standard_normal((n, D, L)), rng.standard_normal((n, D, T)), np.arange(n))

    def test_perfect_predictor(self, rng):
        data = self._data(rng)
        lookup = {x.tobytes(): y for x, y in zip(data.inputs, data.targets)}
        m = evaluate_predictor(lambda xs: np.stack([lookup[x.tobytes()] for x in xs]), data, 2)
        assert (m.mse, m.mae) == (0.0, 0.0)

    def test_constant_offset(self, rng):
        data = self._data(rng, n=1)
        mse, mae = evaluate_predictor(lambda xs: data.targets + 0.5, data)
        assert mse == 0.25 and mae == 0.5

    def test_zero_predictor_on_standardized_data(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((40000, 1))
        data = WindowDataset(z[:, :, None] * 0, np.ascontiguousarray(z.reshape(-1, 1, 1)), np.arange(40000))
        m = evaluate_predictor(lambda xs: np.zeros((len(xs), 1, 1)), data, 128)
        assert m.mse == pytest.approx(1.0, abs=0.03)
        assert m.mae == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)

    def test_every_window_once(self, rng):
        data = self._data(rng, n=11)
        seen = []

        def predict(xs):
            seen.append(len(xs))
            return np.zeros((len(xs), 2, 3))

        m = evaluate_predictor(predict, data, batch_size=4)
        assert seen == [4, 4, 3] and m.n_windows == 11

    def test_per_step_metrics_average(self, rng):
        data = self._data(rng, n=7)
        m = evaluate_predictor(lambda xs: np.zeros((len(xs), 2, 3)), data, 3)
        assert m.mse == pytest.approx(m.mse_per_step.mean(), rel=1e-14)

    def test_persistence(self):
        x = np.arange(12.0).reshape(2, 1, 6)
        np.testing.assert_array_equal(persistence_forecast(x, 3), [[[5, 5, 5]], [[11, 11, 11]]])

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            evaluate_predictor(lambda xs: xs, self._data(rng, n=0))
