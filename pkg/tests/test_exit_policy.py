"""Puzzlement and the two-stage exit decision logic."""

import math

import mpmath
import numpy as np
import pytest

from loopformer.exit_policy import (
    ExitPolicy,
    cwb_decide,
    puzzlement,
    stage1_exit,
    stage2_exit,
)


def dist(*values):
    return np.array(values, dtype=float)


class TestPuzzlement:
    def test_uniform_is_one(self):
        for c in (2, 3, 5, 11):
            assert abs(puzzlement(np.full(c, 1.0 / c)) - 1.0) < 1e-12

    def test_one_hot_is_zero(self):
        for c in (2, 3, 7):
            p = np.zeros(c)
            p[c // 2] = 1.0
            assert abs(puzzlement(p)) < 1e-12

    def test_two_class_oracle(self):
        # oracle: 50-digit evaluation of sum(p log p) / log(1/C)
        mpmath.mp.dps = 50
        p9, p1 = mpmath.mpf("0.9"), mpmath.mpf("0.1")
        expected = float((p9 * mpmath.log(p9) + p1 * mpmath.log(p1)) / mpmath.log(mpmath.mpf(1) / 2))
        got = puzzlement(dist(0.9, 0.1))
        assert abs(got - expected) < 1e-9
        assert 0.46 < got < 0.48

    def test_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = rng.dirichlet(np.ones(rng.integers(2, 8)))
            value = puzzlement(p)
            assert 0.0 <= value <= 1.0 + 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.dirichlet(np.ones(5))
            assert abs(puzzlement(p) - puzzlement(p[rng.permutation(5)])) < 1e-12

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            puzzlement(dist(1.0))


class TestStage1:
    def test_delta_zero_never_fires(self):
        rng = np.random.default_rng(2)
        assert not stage1_exit(dist(1.0, 0.0), 0.0)  # strict inequality
        for _ in range(50):
            assert not stage1_exit(rng.dirichlet(np.ones(3)), 0.0)

    def test_one_hot_fires_at_small_delta(self):
        assert stage1_exit(dist(1.0, 0.0, 0.0), 0.1)

    def test_uniform_never_fires_even_at_one(self):
        assert not stage1_exit(dist(0.5, 0.5), 1.0)

    def test_monotone_in_delta(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4))
            delta = rng.uniform(0, 1)
            if stage1_exit(p, delta):
                assert stage1_exit(p, min(1.0, delta + rng.uniform(0, 1 - delta)) if delta < 1 else delta)


class TestStage2:
    def test_constructed_trace_fires_all_criteria(self):
        history = [dist(0.3, 0.3, 0.4), dist(0.25, 0.25, 0.5), dist(0.2, 0.2, 0.6)]
        for criterion in ("bias-trend", "stable-label"):
            assert stage2_exit(history, ExitPolicy(delta=0.0, window=3, criterion=criterion))
        assert stage2_exit(history, ExitPolicy(delta=0.0, window=3, criterion="range", range_eps=0.21))

    def test_label_flip_blocks_trend_criteria(self):
        history = [dist(0.6, 0.3, 0.1), dist(0.3, 0.6, 0.1), dist(0.6, 0.3, 0.1)]
        assert not stage2_exit(history, ExitPolicy(delta=0.0, window=3, criterion="bias-trend"))
        assert not stage2_exit(history, ExitPolicy(delta=0.0, window=3, criterion="stable-label"))

    def test_decreasing_top_probability_blocks_bias_trend(self):
        history = [dist(0.7, 0.2, 0.1), dist(0.6, 0.3, 0.1)]
        assert not stage2_exit(history, ExitPolicy(delta=0.0, window=2, criterion="bias-trend"))
        assert stage2_exit(history, ExitPolicy(delta=0.0, window=2, criterion="stable-label"))

    def test_short_history_never_fires(self):
        history = [dist(0.2, 0.2, 0.6)] * 5
        assert not stage2_exit(history, ExitPolicy(delta=0.0, window=8))

    def test_infinite_window_disables_stage2(self):
        history = [dist(0.2, 0.2, 0.6)] * 50
        assert not stage2_exit(history, ExitPolicy(delta=0.0, window=math.inf))

    def test_range_criterion_uses_per_class_spread(self):
        # class 0 drifts by 0.06 while others stay put
        history = [dist(0.30, 0.35, 0.35), dist(0.36, 0.32, 0.32), dist(0.33, 0.335, 0.335)]
        policy_tight = ExitPolicy(delta=0.0, window=3, criterion="range", range_eps=0.05)
        policy_loose = ExitPolicy(delta=0.0, window=3, criterion="range", range_eps=0.07)
        assert not stage2_exit(history, policy_tight)
        assert stage2_exit(history, policy_loose)

    def test_only_trailing_window_counts(self):
        history = [dist(0.1, 0.8, 0.1), dist(0.4, 0.3, 0.3), dist(0.5, 0.3, 0.2)]
        policy = ExitPolicy(delta=0.0, window=2, criterion="stable-label")
        assert stage2_exit(history, policy)  # last two agree despite the first


class TestCwbDecide:
    def test_forced_exit_only_at_final_layer(self):
        uniform = dist(1 / 3, 1 / 3, 1 / 3)
        policy = ExitPolicy(delta=0.0, window=math.inf)
        for layer in range(1, 4):
            assert not cwb_decide([uniform] * layer, policy, layer, 4).exit
        decision = cwb_decide([uniform] * 4, policy, 4, 4)
        assert decision.exit and decision.stage == "forced"

    def test_stage1_takes_priority(self):
        confident = dist(0.98, 0.01, 0.01)
        policy = ExitPolicy(delta=0.5, window=2, criterion="stable-label")
        decision = cwb_decide([confident, confident], policy, 2, 4)
        assert decision.exit and decision.stage == "stage1"

    def test_stage2_fires_when_stage1_cannot(self):
        # delta 0 silences stage 1; two equal labels satisfy stable-label
        history = [dist(0.4, 0.35, 0.25), dist(0.45, 0.3, 0.25)]
        policy = ExitPolicy(delta=0.0, window=2, criterion="stable-label")
        decision = cwb_decide(history, policy, 2, 4)
        assert decision.exit and decision.stage == "stage2"

    def test_one_hot_small_delta_fires_stage1_at_layer_one(self):
        decision = cwb_decide([dist(1.0, 0.0)], ExitPolicy(delta=0.5), 1, 4)
        assert decision.exit and decision.stage == "stage1"

    def test_pure_function(self):
        history = [dist(0.5, 0.3, 0.2)]
        policy = ExitPolicy(delta=0.4, window=8)
        first = cwb_decide(history, policy, 1, 4)
        for _ in range(5):
            assert cwb_decide(history, policy, 1, 4) == first

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            cwb_decide([], ExitPolicy(delta=0.5), 1, 4)


class TestPolicyValidation:
    def test_delta_bounds(self):
        with pytest.raises(ValueError):
            ExitPolicy(delta=-0.1)
        with pytest.raises(ValueError):
            ExitPolicy(delta=1.5)

    def test_window_minimum(self):
        with pytest.raises(ValueError):
            ExitPolicy(delta=0.5, window=1)
        ExitPolicy(delta=0.5, window=math.inf)  # allowed

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            ExitPolicy(delta=0.5, criterion="magic")
