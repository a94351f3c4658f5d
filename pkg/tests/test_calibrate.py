"""Calibration tests: temperature scaling, smoothing, entropy-matched tuning."""

import math

import numpy as np
import pytest

from mixbudget.calibrate import (
    CalibrationConfig,
    CalibrationError,
    mean_entropy,
    pred_smooth,
    temp_scale,
    train_smooth,
    tune_entropy_match,
)
from mixbudget.model import softmax


class TestTempScale:
    def test_unit_temperature_is_plain_softmax(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(10, 4))
        assert np.array_equal(temp_scale(logits, 1.0), softmax(logits))

    def test_large_temperature_approaches_uniform(self):
        p = temp_scale(np.array([3.0, 1.0, 0.0]), 1e6)
        assert np.all(np.abs(p - 1 / 3) < 1e-5)

    def test_closed_form(self):
        p = temp_scale(np.array([math.log(4), 0.0]), 2.0)
        assert np.allclose(p, [2 / 3, 1 / 3], atol=1e-12)

    def test_nonpositive_temperature_rejected(self):
        for T in (0.0, -1.0):
            with pytest.raises(CalibrationError):
                temp_scale(np.zeros(3), T)

    def test_argmax_preserved_for_every_temperature(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(scale=3.0, size=(50, 5))
        base = np.argmax(logits, axis=1)
        for T in (1e-3, 0.1, 1.0, 7.0, 1e3):
            assert np.array_equal(np.argmax(temp_scale(logits, T), axis=1), base)


class TestPredSmooth:
    def test_zero_mass_is_identity(self):
        d = np.array([0.6, 0.3, 0.1])
        assert np.array_equal(pred_smooth(d, 0.0), d)

    def test_one_hot_example(self):
        out = pred_smooth(np.array([1.0, 0.0, 0.0]), 0.3)
        assert np.allclose(out, [0.8, 0.1, 0.1], atol=1e-12)

    def test_mass_exceeding_argmax_rejected(self):
        with pytest.raises(CalibrationError):
            pred_smooth(np.array([0.5, 0.3, 0.2]), 0.6)

    def test_mass_conserved_and_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            d = rng.dirichlet(np.ones(4))
            a = float(rng.random() * d.max())
            out = pred_smooth(d, a)
            assert out.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(out >= -1e-15)

    def test_argmax_stable_below_algebraic_bound(self):
        # smoothing moves the argmax entry to p_max - a + a/k and every
        # other entry to p_c + a/k, so the argmax survives exactly while
        # a <= p_max - p_second; search for counterexamples on both sides
        rng = np.random.default_rng(3)
        for _ in range(300):
            k = int(rng.integers(2, 6))
            d = rng.dirichlet(np.ones(k))
            order = np.sort(d)[::-1]
            bound = order[0] - order[1]
            a = float(rng.random() * bound * 0.999)
            out = pred_smooth(d, a)
            assert np.argmax(out) == np.argmax(d)

    def test_argmax_flips_above_bound(self):
        d = np.array([0.6, 0.35, 0.05])
        out = pred_smooth(d, 0.3)  # above p_max - p_second = 0.25
        assert np.argmax(out) != np.argmax(d)


class TestTrainSmooth:
    def test_one_hot_example(self):
        out = train_smooth(np.array([0.0, 1.0, 0.0]), 0.3)
        assert np.allclose(out, [0.1, 0.8, 0.1], atol=1e-12)

    def test_zero_mass_is_identity(self):
        t = np.array([0.0, 1.0, 0.0])
        assert np.array_equal(train_smooth(t, 0.0), t)

    def test_mass_conserved(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            t = np.zeros(4)
            t[rng.integers(4)] = 1.0
            out = train_smooth(t, float(rng.random()))
            assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_tied_gold_rejected(self):
        with pytest.raises(CalibrationError, match="unique gold"):
            train_smooth(np.array([0.5, 0.5, 0.0]), 0.1)


class TestTuneEntropyMatch:
    def test_fixed_point_returns_unit_temperature(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(scale=2.0, size=(200, 3))
        target = mean_entropy(softmax(logits))
        result = tune_entropy_match("temp_scaling", logits, target)
        assert abs(result.scalar - 1.0) < 1e-3
        assert not result.warning

    def test_unreachable_target_warns_at_boundary(self):
        logits = np.array([[3000.0, 1000.0, 0.0]] * 5)
        result = tune_entropy_match("temp_scaling", logits, math.log(3))
        assert result.scalar == 1e3
        assert result.warning

    def test_overconfident_predictions_raised_to_target(self):
        # construct predictions with mean entropy near 0.414 nats, then
        # ask the tuner for 0.732 nats
        rng = np.random.default_rng(6)
        golds = rng.integers(0, 3, size=400)

        def mean_H(scale):
            logits = scale * np.eye(3)[golds] + 0.05 * rng2.normal(size=(400, 3))
            return logits, mean_entropy(softmax(logits))

        lo, hi = 0.1, 50.0
        for _ in range(80):  # independent bisection for the test fixture
            rng2 = np.random.default_rng(7)
            mid = 0.5 * (lo + hi)
            _, h = mean_H(mid)
            if h > 0.414:
                lo = mid
            else:
                hi = mid
        rng2 = np.random.default_rng(7)
        logits, h0 = mean_H(0.5 * (lo + hi))
        assert abs(h0 - 0.414) < 1e-3

        result = tune_entropy_match("temp_scaling", logits, 0.732)
        assert result.scalar > 1.0
        assert abs(result.achieved_entropy - 0.732) <= 1e-3
        assert not result.warning

    def test_pred_smoothing_tunes_to_target(self):
        rng = np.random.default_rng(8)
        sharp = rng.dirichlet(np.full(3, 0.3), size=300)
        start = mean_entropy(sharp)
        target = min(start + 0.3, math.log(3) * 0.9)
        result = tune_entropy_match("pred_smoothing", sharp, target)
        assert abs(result.achieved_entropy - target) <= 1e-3
        smoothed = pred_smooth(sharp, result.scalar)
        assert mean_entropy(smoothed) == pytest.approx(result.achieved_entropy, abs=1e-12)

    def test_train_smoothing_tunes_one_hot_targets(self):
        onehots = np.eye(3)[np.zeros(50, dtype=int)]
        result = tune_entropy_match("train_smoothing", onehots, 0.5)
        assert abs(result.achieved_entropy - 0.5) <= 1e-3
        assert 0 < result.scalar < 1

    def test_empty_input_rejected(self):
        with pytest.raises(CalibrationError, match="empty"):
            tune_entropy_match("temp_scaling", np.zeros((0, 3)), 0.5)

    def test_target_outside_range_rejected(self):
        with pytest.raises(CalibrationError):
            tune_entropy_match("temp_scaling", np.zeros((2, 3)), math.log(3) + 0.5)

    def test_mean_entropy_monotone_in_temperature(self):
        # the empirical property the tuner's guard relies on
        rng = np.random.default_rng(9)
        for _ in range(10):
            logits = rng.normal(scale=4.0, size=(50, 4))
            values = [mean_entropy(temp_scale(logits, T)) for T in (1, 2, 4, 8, 16, 64)]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestCalibrationConfig:
    def test_unknown_method_rejected(self):
        with pytest.raises(CalibrationError):
            CalibrationConfig(method="platt")
