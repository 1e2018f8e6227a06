"""Loss weighting, per-layer losses, and the Adam training loop."""

import math

import mpmath
import numpy as np
import pytest

from loopformer import autodiff as ad
from loopformer.autodiff import Tape, value_of
from loopformer.data import Vocab, encode_dataset, synth_dataset
from loopformer.model import ModelConfig, Parameters
from loopformer.training import (
    TrainConfig,
    TrainingDiverged,
    exit_weights,
    layer_losses,
    total_loss,
    train,
)


def make_examples(config, n=60, seed=1):
    records = synth_dataset(seed=seed, n=n, classes=config.classes)
    vocab = Vocab.build((r.text for r in records), max_size=config.vocab)
    seqs, labels = encode_dataset(records, vocab, config.seq_len)
    return list(zip(seqs, labels))


class TestExitWeights:
    def test_zero_logits_d4(self):
        w = exit_weights(np.zeros(3))
        np.testing.assert_allclose(w, [0.5, 0.5, 0.5, 2.5], atol=1e-15)

    def test_sum_equals_depth_for_random_logits(self):
        rng = np.random.default_rng(0)
        for d in (2, 4, 12, 24):
            for _ in range(100):
                t = rng.normal(scale=3.0, size=d - 1)
                assert abs(exit_weights(t).sum() - d) < 1e-12

    def test_init_value_four_matches_high_precision_sigmoid(self):
        # oracle: 50-digit sigmoid(4)
        mpmath.mp.dps = 50
        sig4 = float(1 / (1 + mpmath.e ** mpmath.mpf(-4)))
        w = exit_weights(np.full(23, 4.0))
        np.testing.assert_allclose(w[:23], sig4, atol=1e-12)
        assert abs(w[23] - (24 - 23 * sig4)) < 1e-9
        assert 1.40 < w[23] < 1.42

    def test_differentiable(self):
        t0 = np.array([0.4, -1.0, 2.0])

        def f(t):
            return ad.sum_all(ad.mul(exit_weights(t), np.array([1.0, 2.0, 3.0, 4.0])))

        assert ad.grad_check(f, [t0]) < 1e-8

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            exit_weights(np.zeros(3), depth=3)


class TestLayerLosses:
    def test_one_hot_traces_give_zero(self):
        one_hot = np.array([0.0, 1.0, 0.0])
        np.testing.assert_array_equal(layer_losses([one_hot] * 4, 1), np.zeros(4))

    def test_uniform_traces_give_log_c(self):
        uniform = np.full(3, 1.0 / 3.0)
        np.testing.assert_allclose(layer_losses([uniform] * 4, 2), math.log(3.0), atol=1e-12)

    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(1)
        trace = [rng.dirichlet(np.ones(3)) for _ in range(5)]
        label = 2
        got = layer_losses(trace, label)
        expected = [-math.log(max(float(p[label]), 1e-12)) for p in trace]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            layer_losses([np.array([0.5, 0.5])], 2)


class TestTotalLoss:
    def test_equal_losses_collapse_to_depth_times_loss(self):
        p = np.array([0.25, 0.5, 0.25])  # same loss at every layer
        for t in (np.zeros(3), np.array([4.0, -2.0, 0.3])):
            got = float(value_of(total_loss([p] * 4, 1, t)))
            assert abs(got - 4 * (-math.log(0.5))) < 1e-12

    def test_hand_arithmetic_d2(self):
        # losses (2, 4) with t1 = 0: 0.5*2 + 1.5*4 = 7
        p1 = np.array([math.exp(-2.0), 1 - math.exp(-2.0)])
        p2 = np.array([math.exp(-4.0), 1 - math.exp(-4.0)])
        got = float(value_of(total_loss([p1, p2], 0, np.zeros(1))))
        assert abs(got - 7.0) < 1e-12

    def test_gradient_wrt_logits_matches_closed_form(self):
        # d=2: dL/dt1 = sigmoid'(t1) * (L1 - L2)
        losses = np.array([2.0, 4.0])
        t1 = 0.7

        def f(t):
            return ad.sum_all(ad.mul(exit_weights(t), losses))

        assert ad.grad_check(f, [np.array([t1])]) < 1e-8
        tape = Tape()
        tv = tape.leaf(np.array([t1]))
        tape.backward(f(tv))
        sig = 1 / (1 + math.exp(-t1))
        expected = sig * (1 - sig) * (losses[0] - losses[1])
        assert abs(float(tv.grad[0]) - expected) < 1e-12


class TestTrain:
    CFG = ModelConfig(depth=3, hidden=16, heads=2, ffn=32, vocab=64, seq_len=12, classes=3)

    def test_zero_learning_rate_leaves_parameters_bitwise(self):
        params = Parameters.initialize(self.CFG, seed=2)
        examples = make_examples(self.CFG, n=24)
        cfg = TrainConfig(learning_rate=0.0, batch_size=8, epochs=1, seed=0)
        trained, _, _ = train(params, examples, examples[:8], cfg)
        for (_, before), (_, after) in zip(params.tensor_items(), trained.tensor_items()):
            assert before.tobytes() == after.tobytes()

    def test_seeded_runs_are_bitwise_identical(self):
        params = Parameters.initialize(self.CFG, seed=2)
        examples = make_examples(self.CFG, n=24)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=1, seed=9)
        first, metrics_a, _ = train(params, examples, examples[:8], cfg)
        second, metrics_b, _ = train(params, examples, examples[:8], cfg)
        assert metrics_a[0].train_loss == metrics_b[0].train_loss
        for (_, x), (_, y) in zip(first.tensor_items(), second.tensor_items()):
            assert x.tobytes() == y.tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_with_diagnostic(self):
        # Adam updates are ~lr in magnitude, so an absurd rate overflows the
        # weights after one step and the next forward pass turns NaN
        params = Parameters.initialize(self.CFG, seed=2)
        examples = make_examples(self.CFG, n=8)
        cfg = TrainConfig(learning_rate=1e200, batch_size=8, epochs=4, seed=0)
        with pytest.raises(TrainingDiverged):
            train(params, examples, examples, cfg)

    def test_learns_separable_task(self, small_trained):
        _, _, _, _, metrics = small_trained
        assert metrics[-1].val_accuracy >= 0.95
        assert len(metrics) <= 10

    def test_loss_decreases(self, small_trained):
        _, _, _, _, metrics = small_trained
        assert metrics[-1].train_loss < metrics[0].train_loss

    def test_empty_training_set_rejected(self):
        params = Parameters.initialize(self.CFG, seed=2)
        with pytest.raises(ValueError):
            train(params, [], [], TrainConfig())

    def test_bad_labels_rejected(self):
        params = Parameters.initialize(self.CFG, seed=2)
        examples = make_examples(self.CFG, n=6)
        examples = [(seq, 7) for seq, _ in examples]
        with pytest.raises(ValueError, match="label"):
            train(params, examples, [], TrainConfig())


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 3e-5
        assert cfg.batch_size == 32
        assert cfg.epochs == 10
        assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
