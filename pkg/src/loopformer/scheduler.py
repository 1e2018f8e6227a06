"""Batched inference strategies over the shared encoder.

Five execution strategies process the same input stream:

* ``case1``  - sequential, full depth, no exit checks.
* ``case2``  - sequential with the two-stage exit policy.
* ``case3``  - synchronous batches, full depth.
* ``case4``  - synchronous batches with exits; a batch runs until its
  slowest member exits, finished samples riding along as dead occupancy.
* ``alg1``   - slot refill: one persistent batch of N slots stepped
  together; a slot that exits is refilled from the stream mid-flight
  (legal because every iteration uses the same weights), and a drain
  phase finishes the stragglers with inactive slots zero-filled.

Every strategy records a :class:`StepLog` that drives the compute-ratio
metric and an affine step-latency cost model for throughput simulation.
The scheduler never changes results: per-sample predictions and exit
layers match the sequential policy run exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exit_policy import ExitPolicy, STAGE_NONE, cwb_decide
from .model import (
    Parameters,
    TokenSequence,
    classify,
    embed,
    encoder_step,
    forward_with_trace,
    predicted_label,
)
from .numerics import DTYPE

STRATEGIES = ("case1", "case2", "case3", "case4", "alg1")


@dataclass
class StepRecord:
    step: int
    active: int  # slots doing useful work this step
    refills: int  # samples newly embedded right before this step
    width: int  # tensor width charged by the cost model


@dataclass
class SampleResult:
    sample_id: int
    label: Optional[int]
    prediction: int
    exit_layer: int
    exit_stage: str
    probs: list  # per-layer distributions up to the exit layer


@dataclass
class StepLog:
    strategy: str
    n_slots: int
    depth: int
    steps: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    classifier_calls: int = 0

    def total_active(self) -> int:
        return sum(rec.active for rec in self.steps)

    def executed_layers(self) -> int:
        return sum(res.exit_layer for res in self.samples)

    def accuracy(self) -> float:
        known = [res for res in self.samples if res.label is not None]
        if not known:
            raise ValueError("stream carried no labels")
        return sum(res.prediction == res.label for res in known) / len(known)


@dataclass(frozen=True)
class CostModel:
    """Affine step latency: one encoder step over n slots costs a + b*n.

    ``embed_per_sample`` and ``classify_per_call`` are charged per
    embedding-layer call and per exit-check classification.  Throughput
    saturates at 1/(depth*b) as the batch grows, which is the behavior
    the parameters are calibrated to reproduce.
    """

    step_base: float
    step_per_slot: float
    embed_per_sample: float = 0.0
    classify_per_call: float = 0.0

    def __post_init__(self):
        if self.step_base < 0 or self.step_per_slot <= 0:
            raise ValueError("need step_base >= 0 and step_per_slot > 0")

    @staticmethod
    def calibrated(
        depth: int = 24,
        throughput_single: float = 38.0,
        throughput_batched: float = 240.0,
        batch: int = 32,
        overhead_frac: float = 0.02,
    ) -> "CostModel":
        """Solve (a, b) so full-depth throughput hits the two anchors.

        Anchors: ``throughput_single`` at batch size 1 and
        ``throughput_batched`` at ``batch`` slots, both at full depth
        with one embed and one classify per sample.  Embed and classify
        are each priced at ``overhead_frac`` of a width-1 encoder step.
        """
        # per-sample time: depth*(a/n + b) + e + c  with  e = c = f*(a+b)
        f2 = 2.0 * overhead_frac
        t1 = 1.0 / throughput_single
        tn = 1.0 / throughput_batched
        # t1 = (depth + f2)*(a+b);  tn = depth*(a/batch + b) + f2*(a+b)
        u = t1 / (depth + f2)  # a + b
        a = (t1 - tn) / (depth * (1.0 - 1.0 / batch))
        b = u - a
        overhead = overhead_frac * u
        return CostModel(step_base=a, step_per_slot=b, embed_per_sample=overhead, classify_per_call=overhead)


DEFAULT_COST_MODEL = CostModel.calibrated()


def _check_labels(stream, labels):
    if labels is not None and len(labels) != len(stream):
        raise ValueError(f"{len(labels)} labels for {len(stream)} samples")


def _label(labels, i):
    return None if labels is None else int(labels[i])


def run_case1(
    stream: Sequence[TokenSequence],
    params: Parameters,
    labels: Optional[Sequence[int]] = None,
    depth: int | None = None,
) -> StepLog:
    """Sequential full-depth inference, one sample at a time."""
    _check_labels(stream, labels)
    d = params.config.depth if depth is None else depth
    log = StepLog("case1", 1, d)
    step = 0
    for i, seq in enumerate(stream):
        pred, exit_layer, trace = forward_with_trace(seq, params, policy=None, depth=d)
        for _ in range(exit_layer):
            log.steps.append(StepRecord(step, 1, 0, 1))
            step += 1
        log.classifier_calls += 1  # single read-out at full depth
        log.samples.append(SampleResult(i, _label(labels, i), pred, exit_layer, STAGE_NONE, trace.probs))
    return log


def run_case2(
    stream: Sequence[TokenSequence],
    params: Parameters,
    policy: Optional[ExitPolicy],
    labels: Optional[Sequence[int]] = None,
) -> StepLog:
    """Sequential inference with per-sample early exit."""
    if policy is None:
        log = run_case1(stream, params, labels)
        log.strategy = "case2"
        return log
    _check_labels(stream, labels)
    d = params.config.depth
    log = StepLog("case2", 1, d)
    step = 0
    for i, seq in enumerate(stream):
        pred, exit_layer, trace = forward_with_trace(seq, params, policy)
        for _ in range(exit_layer):
            log.steps.append(StepRecord(step, 1, 0, 1))
            step += 1
        log.classifier_calls += exit_layer  # exit check after every iteration
        log.samples.append(SampleResult(i, _label(labels, i), pred, exit_layer, trace.exit_stage, trace.probs))
    return log


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield range(lo, min(lo + size, n))


def run_case3(
    stream: Sequence[TokenSequence],
    params: Parameters,
    n_slots: int,
    labels: Optional[Sequence[int]] = None,
) -> StepLog:
    """Synchronous fixed batches, all samples at full depth."""
    if n_slots < 1:
        raise ValueError(f"n_slots must be >= 1, got {n_slots}")
    _check_labels(stream, labels)
    d = params.config.depth
    log = StepLog("case3", n_slots, d)
    step = 0
    for batch in _batches(len(stream), n_slots):
        members = [stream[i] for i in batch]
        ids = np.stack([seq.ids for seq in members])
        mask = np.stack([seq.mask for seq in members])
        h = embed(ids, mask, params)
        traces = [[] for _ in batch]
        for _ in range(d):
            h, _ = encoder_step(h, mask, params)
            probs = classify(h, params)
            for j in range(len(members)):
                traces[j].append(probs[j])
            log.steps.append(StepRecord(step, len(members), 0, n_slots))
            step += 1
        log.classifier_calls += len(members)
        for j, i in enumerate(batch):
            p_final = traces[j][-1]
            log.samples.append(
                SampleResult(i, _label(labels, i), predicted_label(p_final), d, STAGE_NONE, traces[j])
            )
    return log


def run_case4(
    stream: Sequence[TokenSequence],
    params: Parameters,
    policy: Optional[ExitPolicy],
    n_slots: int,
    labels: Optional[Sequence[int]] = None,
) -> StepLog:
    """Synchronous batches with exits: each batch runs to its slowest member.

    A sample that exits stays in the tensor as dead occupancy until the
    whole batch finishes (the cost model keeps charging the full width).
    """
    if n_slots < 1:
        raise ValueError(f"n_slots must be >= 1, got {n_slots}")
    if policy is None:
        log = run_case3(stream, params, n_slots, labels)
        log.strategy = "case4"
        return log
    _check_labels(stream, labels)
    d = params.config.depth
    log = StepLog("case4", n_slots, d)
    step = 0
    for batch in _batches(len(stream), n_slots):
        members = [stream[i] for i in batch]
        ids = np.stack([seq.ids for seq in members])
        mask = np.stack([seq.mask for seq in members])
        h = embed(ids, mask, params)
        traces = [[] for _ in batch]
        done: list[Optional[SampleResult]] = [None] * len(members)
        for layer in range(1, d + 1):
            active = [j for j in range(len(members)) if done[j] is None]
            if not active:
                break
            h, _ = encoder_step(h, mask, params)
            probs = classify(h, params)
            log.steps.append(StepRecord(step, len(active), 0, n_slots))
            step += 1
            log.classifier_calls += len(active)
            for j in active:
                traces[j].append(probs[j])
                decision = cwb_decide(traces[j], policy, layer, d)
                if decision.exit:
                    i = batch[j]
                    done[j] = SampleResult(
                        i,
                        _label(labels, i),
                        predicted_label(probs[j]),
                        layer,
                        decision.stage,
                        traces[j],
                    )
        log.samples.extend(res for res in done if res is not None)
    log.samples.sort(key=lambda r: r.sample_id)
    return log


def run_algorithm1(
    stream: Sequence[TokenSequence],
    params: Parameters,
    policy: Optional[ExitPolicy],
    n_slots: int,
    labels: Optional[Sequence[int]] = None,
) -> StepLog:
    """Slot-refill batched inference.

    A persistent (n_slots, seq_len, hidden) tensor is stepped through the
    shared encoder; every active slot is classified and exit-checked each
    step.  Freed slots are refilled from the stream between steps, so
    samples at different iteration counts share one batch.  When the
    stream runs dry, the drain phase zero-fills inactive slots and keeps
    stepping until every flag clears.
    """
    if n_slots < 1:
        raise ValueError(f"n_slots must be >= 1, got {n_slots}")
    _check_labels(stream, labels)
    cfg = params.config
    d = cfg.depth
    log = StepLog("alg1", n_slots, d)

    hidden = np.zeros((n_slots, cfg.seq_len, cfg.hidden), dtype=DTYPE)
    masks = np.zeros((n_slots, cfg.seq_len), dtype=bool)
    masks[:, 0] = True  # keep empty slots softmax-safe
    flags = np.zeros(n_slots, dtype=bool)
    layer_count = np.zeros(n_slots, dtype=np.int64)
    slot_sample = np.full(n_slots, -1, dtype=np.int64)
    traces: list[list] = [[] for _ in range(n_slots)]

    return_list = list(range(n_slots))
    cursor = 0
    step = 0
    pending_refills = 0

    def refill() -> None:
        nonlocal cursor, pending_refills
        take = min(len(return_list), len(stream) - cursor)
        for _ in range(take):
            slot = return_list.pop(0)
            seq = stream[cursor]
            hidden[slot] = embed(seq.ids, seq.mask, params)
            masks[slot] = seq.mask
            flags[slot] = True
            layer_count[slot] = 0
            slot_sample[slot] = cursor
            traces[slot] = []
            cursor += 1
            pending_refills += 1

    def step_once() -> None:
        nonlocal step, pending_refills
        active = np.flatnonzero(flags)
        out, _ = encoder_step(hidden, masks, params)
        hidden[:] = out
        layer_count[active] += 1
        probs = classify(hidden, params)
        log.steps.append(StepRecord(step, len(active), pending_refills, n_slots))
        pending_refills = 0
        step += 1
        for slot in active:
            traces[slot].append(probs[slot])
            layer = int(layer_count[slot])
            if policy is not None:
                decision = cwb_decide(traces[slot], policy, layer, d)
            else:
                decision = None
            exited = decision.exit if decision is not None else layer == d
            if exited:
                i = int(slot_sample[slot])
                stage = decision.stage if decision is not None else STAGE_NONE
                log.samples.append(
                    SampleResult(
                        i,
                        _label(labels, i),
                        predicted_label(probs[slot]),
                        layer,
                        stage,
                        traces[slot],
                    )
                )
                flags[slot] = False
                layer_count[slot] = 0
                return_list.append(slot)

    while cursor < len(stream):
        refill()
        # inner loop: step while the batch stays fully active
        while flags.all():
            step_once()

    # drain: zero inactive slots and finish the stragglers
    while flags.any():
        for slot in np.flatnonzero(~flags):
            hidden[slot] = 0.0
            masks[slot] = False
            masks[slot, 0] = True
        step_once()

    if policy is not None:
        log.classifier_calls = log.total_active()
    else:
        # without exit checks only the final read-out is charged
        log.classifier_calls = len(stream)
    log.samples.sort(key=lambda r: r.sample_id)
    return log


def compute_ratio(log: StepLog, depth: int | None = None) -> float:
    """Executed layers over the full-depth layer budget, in (0, 1]."""
    if not log.samples:
        raise ValueError("empty step log")
    d = log.depth if depth is None else depth
    return log.executed_layers() / (len(log.samples) * d)


def simulate_latency(log: StepLog, cm: CostModel = DEFAULT_COST_MODEL) -> tuple[float, float]:
    """Total simulated time and throughput (samples per time unit)."""
    step_time = sum(cm.step_base + cm.step_per_slot * rec.width for rec in log.steps)
    total = (
        step_time
        + cm.embed_per_sample * len(log.samples)
        + cm.classify_per_call * log.classifier_calls
    )
    return total, len(log.samples) / total


@dataclass
class StrategyRow:
    strategy: str
    n_slots: int
    accuracy: float
    compute_ratio: float
    sim_time: float
    throughput: float
    speedup: float


def compare_strategies(
    stream: Sequence[TokenSequence],
    params: Parameters,
    policy: Optional[ExitPolicy],
    n_slots: int,
    cm: CostModel = DEFAULT_COST_MODEL,
    labels: Optional[Sequence[int]] = None,
) -> tuple[list[StrategyRow], dict[str, StepLog]]:
    """Run all five strategies on one stream and tabulate the tradeoffs."""
    logs = {
        "case1": run_case1(stream, params, labels),
        "case2": run_case2(stream, params, policy, labels),
        "case3": run_case3(stream, params, n_slots, labels),
        "case4": run_case4(stream, params, policy, n_slots, labels),
        "alg1": run_algorithm1(stream, params, policy, n_slots, labels),
    }
    base_time, _ = simulate_latency(logs["case1"], cm)
    rows = []
    for name in STRATEGIES:
        log = logs[name]
        sim_time, throughput = simulate_latency(log, cm)
        rows.append(
            StrategyRow(
                strategy=name,
                n_slots=log.n_slots,
                accuracy=log.accuracy() if labels is not None else float("nan"),
                compute_ratio=compute_ratio(log),
                sim_time=sim_time,
                throughput=throughput,
                speedup=base_time / sim_time,
            )
        )
    return rows, logs
