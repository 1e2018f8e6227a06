"""Multi-exit fine-tuning.

Every iteration depth contributes a cross-entropy term against the
ground-truth label; the terms are combined with dynamic weights derived
from trainable logits (sigmoid for layers 1..d-1, remainder for layer d,
so the weights always sum exactly to the depth).  Optimization is Adam
over every tensor including the weight logits, fully reproducible from
the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, value_of
from .model import Parameters, TokenSequence, forward_all_layers
from .numerics import DTYPE, cross_entropy
from .weights_io import OptimizerState


class TrainingDiverged(RuntimeError):
    """Raised when the loss turns non-finite mid-run."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-5
    batch_size: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_accuracy: float
    seconds: float


def exit_weights(t, depth: int | None = None):
    """Per-layer loss weights from logits ``t`` of length depth-1.

    ``w_i = sigmoid(t_i)`` for the first depth-1 layers and the last
    weight is ``depth - sum(sigmoid(t))``, so the total is exactly the
    depth.  Differentiable when ``t`` is a Var.
    """
    tv = value_of(t)
    if depth is None:
        depth = tv.shape[0] + 1
    if depth < 2 or tv.shape[0] != depth - 1:
        raise ValueError(f"need depth-1 = {depth - 1} logits, got {tv.shape[0]}")
    head = ad.sigmoid(t)
    last = ad.reshape(ad.sub(float(depth), ad.sum_all(head)), (1,))
    return ad.concat_last([head, last])


def layer_losses(trace_probs: Sequence[np.ndarray], label: int) -> np.ndarray:
    """Cross-entropy of each layer's distribution against the true label."""
    if not trace_probs:
        raise ValueError("empty trace")
    return np.array([cross_entropy(p, label) for p in trace_probs], dtype=DTYPE)


def total_loss(trace_probs: Sequence[np.ndarray], label: int, t):
    """Weighted sum of the per-layer losses for one sample.

    The result is differentiable with respect to ``t`` when ``t`` is a
    Var; gradients through the distributions themselves flow in the
    training step, where the whole forward pass is on the tape.
    """
    losses = layer_losses(trace_probs, label)
    w = exit_weights(t, depth=losses.shape[0])
    return ad.sum_all(ad.mul(w, losses))


def batch_loss(params: Parameters, ids: np.ndarray, mask: np.ndarray, labels: np.ndarray):
    """Mean-over-batch weighted multi-exit loss; Var-aware via ``params``."""
    probs_by_layer = forward_all_layers(ids, mask, params)
    w = exit_weights(params.exit_logits, depth=len(probs_by_layer))
    total = None
    for i, p in enumerate(probs_by_layer):
        term = ad.mul(ad.pick(w, i), ad.cross_entropy_mean(p, labels))
        total = term if total is None else ad.add(total, term)
    return total


def _adam_init(params: Parameters) -> OptimizerState:
    zeros = {name: np.zeros_like(arr) for name, arr in params.tensor_items()}
    return OptimizerState(step=0, m=zeros, v={k: a.copy() for k, a in zeros.items()})


def _adam_update(params: Parameters, grads: dict[str, np.ndarray], state: OptimizerState, cfg: TrainConfig) -> None:
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, arr in params.tensor_items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        arr -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def full_depth_accuracy(params: Parameters, ids: np.ndarray, mask: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    """Accuracy of the final-layer prediction over an encoded dataset."""
    hits = 0
    for lo in range(0, ids.shape[0], batch_size):
        hi = lo + batch_size
        probs = forward_all_layers(ids[lo:hi], mask[lo:hi], params)[-1]
        hits += int(np.sum(np.argmax(probs, axis=1) == labels[lo:hi]))
    return hits / ids.shape[0]


def stack_examples(examples: Sequence[tuple[TokenSequence, int]]):
    """Pack (sequence, label) pairs into id/mask/label arrays."""
    ids = np.stack([seq.ids for seq, _ in examples])
    mask = np.stack([seq.mask for seq, _ in examples])
    labels = np.array([label for _, label in examples], dtype=np.int64)
    return ids, mask, labels


def train(
    params: Parameters,
    train_examples: Sequence[tuple[TokenSequence, int]],
    val_examples: Sequence[tuple[TokenSequence, int]],
    config: TrainConfig,
    *,
    early_stop_accuracy: float | None = None,
    on_epoch: Optional[Callable[[EpochMetrics], None]] = None,
) -> tuple[Parameters, list[EpochMetrics], OptimizerState]:
    """Mini-batch Adam on the weighted multi-exit loss.

    Mutates a copy of ``params`` and returns it with per-epoch metrics
    (mean train loss, full-depth validation accuracy, wall time).  Runs
    are bitwise reproducible for a fixed seed.  A non-finite loss aborts
    with :class:`TrainingDiverged`.
    """
    if not train_examples:
        raise ValueError("empty training set")
    classes = params.config.classes
    ids, mask, labels = stack_examples(train_examples)
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError(f"label outside [0, {classes}) in training set")
    val_ids, val_mask, val_labels = stack_examples(val_examples) if val_examples else (None, None, None)

    params = params.copy()
    state = _adam_init(params)
    rng = np.random.default_rng(config.seed)
    metrics: list[EpochMetrics] = []

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(ids.shape[0])
        losses = []
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            tape = Tape()
            var_params = params.as_vars(tape)
            loss = batch_loss(var_params, ids[batch], mask[batch], labels[batch])
            loss_value = float(value_of(loss))
            if not np.isfinite(loss_value):
                raise TrainingDiverged(f"non-finite loss {loss_value} at epoch {epoch}")
            losses.append(loss_value)
            tape.backward(loss)
            grads = {
                name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
                for name, leaf in var_params.tensor_items()
            }
            _adam_update(params, grads, state, config)
        val_acc = (
            full_depth_accuracy(params, val_ids, val_mask, val_labels)
            if val_ids is not None
            else float("nan")
        )
        row = EpochMetrics(epoch, float(np.mean(losses)), val_acc, time.perf_counter() - t0)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if early_stop_accuracy is not None and val_acc >= early_stop_accuracy:
            break
    return params, metrics, state
