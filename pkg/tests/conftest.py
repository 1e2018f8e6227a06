"""Shared fixtures: a tiny untrained model, a confidence-spread model for
exercising the exit machinery, and one small trained model reused by the
scheduler/experiment tests."""

import numpy as np
import pytest

from loopformer.data import Vocab, encode_dataset, split_dataset, synth_dataset
from loopformer.model import ModelConfig, Parameters
from loopformer.training import TrainConfig, train

TINY = ModelConfig(depth=4, hidden=16, heads=2, ffn=32, vocab=64, seq_len=12, classes=3)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture()
def tiny_params(tiny_config):
    return Parameters.initialize(tiny_config, seed=42)


def make_spread_params(config: ModelConfig, seed: int = 7) -> Parameters:
    """Untrained weights with enough input dependence that per-sample
    confidence (and hence the exit layer) varies widely."""
    rng = np.random.default_rng(seed)
    params = Parameters.initialize(config, seed=seed)
    params.tok_emb = rng.normal(0, 1.0, params.tok_emb.shape)
    params.pos_emb = rng.normal(0, 1.0, params.pos_emb.shape)
    for name in ("w_q", "w_k", "w_v", "w_o"):
        setattr(params, name, rng.normal(0, 0.5, getattr(params, name).shape))
    params.w_cls = rng.normal(0, 1.5, params.w_cls.shape)
    return params


@pytest.fixture(scope="session")
def spread_model(tiny_config):
    params = make_spread_params(tiny_config)
    records = synth_dataset(seed=13, n=200, classes=3)
    vocab = Vocab.build((r.text for r in records), max_size=tiny_config.vocab)
    seqs, labels = encode_dataset(records, vocab, tiny_config.seq_len)
    return params, seqs, labels


@pytest.fixture(scope="session")
def small_trained():
    """A d=6 model trained on the synthetic task, plus its held-out split."""
    config = ModelConfig(depth=6, hidden=32, heads=4, ffn=64, vocab=128, seq_len=16, classes=3)
    records = synth_dataset(seed=5, n=600, classes=3)
    train_recs, val_recs, test_recs = split_dataset(records, seed=0)
    vocab = Vocab.build((r.text for r in train_recs), max_size=config.vocab)

    def encode(recs):
        seqs, labels = encode_dataset(recs, vocab, config.seq_len)
        return list(zip(seqs, labels))

    params = Parameters.initialize(config, seed=3)
    trained, metrics, _ = train(
        params,
        encode(train_recs),
        encode(val_recs),
        TrainConfig(learning_rate=1e-3, batch_size=32, epochs=10, seed=3),
    )
    test_seqs, test_labels = encode_dataset(test_recs, vocab, config.seq_len)
    return trained, test_seqs, test_labels, vocab, metrics
