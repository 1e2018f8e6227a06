"""Threshold sweeps, attention traces, and the CSV report writers."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exit_policy import ExitPolicy
from .model import Parameters, TokenSequence, forward_with_trace
from .scheduler import StepLog, StrategyRow, compute_ratio, run_algorithm1, run_case1

SWEEP_HEADER = ("delta", "criterion", "window", "accuracy", "compute_ratio", "mean_exit_layer")
COMPARISON_HEADER = ("strategy", "n_slots", "accuracy", "compute_ratio", "sim_time", "throughput", "speedup")
SAMPLES_HEADER = ("sample_id", "label", "prediction", "exit_layer", "exit_stage")
STEPS_HEADER = ("step", "strategy", "occupancy")


@dataclass
class SweepRow:
    delta: Optional[float]  # None marks the full-depth reference point
    criterion: str
    window: Optional[float]
    accuracy: float
    compute_ratio: float
    mean_exit_layer: float


def _summarize(log: StepLog) -> tuple[float, float, float]:
    mean_exit = log.executed_layers() / len(log.samples)
    return log.accuracy(), compute_ratio(log), mean_exit


def evaluate(
    stream: Sequence[TokenSequence],
    labels: Sequence[int],
    params: Parameters,
    policy: Optional[ExitPolicy],
    n_slots: int = 8,
    depth: int | None = None,
) -> SweepRow:
    """Accuracy / compute tradeoff of one policy point (slot-refill execution)."""
    if policy is None:
        log = run_case1(stream, params, labels, depth=depth)
        acc, ratio, mean_exit = _summarize(log)
        return SweepRow(None, "none", None, acc, ratio, mean_exit)
    log = run_algorithm1(stream, params, policy, n_slots, labels)
    acc, ratio, mean_exit = _summarize(log)
    return SweepRow(policy.delta, policy.criterion, policy.window, acc, ratio, mean_exit)


def sweep_delta(
    stream: Sequence[TokenSequence],
    labels: Sequence[int],
    params: Parameters,
    grid: Sequence[float],
    base_policy: ExitPolicy,
    n_slots: int = 8,
) -> list[SweepRow]:
    """Evaluate every threshold in ``grid`` plus the full-depth reference.

    The reference row (delta None) is the model without early exit, the
    rightmost point of an accuracy-vs-compute curve.
    """
    rows = [
        evaluate(stream, labels, params, dataclasses.replace(base_policy, delta=float(delta)), n_slots)
        for delta in grid
    ]
    rows.append(evaluate(stream, labels, params, None, n_slots))
    return rows


def default_delta_grid() -> list[float]:
    """Thresholds 0.1 .. 1.0 in steps of 0.1."""
    return [round(0.1 * k, 1) for k in range(1, 11)]


def export_attention_trace(params: Parameters, seq: TokenSequence) -> np.ndarray:
    """Cumulative start-position attention over a full-depth pass.

    Row ``i`` is the running mean over layers 1..i+1 of the head-averaged
    attention from the sequence-start position to each unmasked position;
    every row sums to 1.  Shape: (depth, n_real_tokens).
    """
    _, _, trace = forward_with_trace(seq, params, policy=None, collect_attention=True)
    real = np.flatnonzero(seq.mask)
    rows = np.stack([layer_row[real] for layer_row in trace.cls_attention])
    return np.cumsum(rows, axis=0) / np.arange(1, rows.shape[0] + 1)[:, None]


# ---------------------------------------------------------------------------
# CSV writers (fixed headers)
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(
                [
                    _fmt(row.delta),
                    row.criterion,
                    _fmt(row.window),
                    _fmt(row.accuracy),
                    _fmt(row.compute_ratio),
                    _fmt(row.mean_exit_layer),
                ]
            )


def write_comparison_csv(path, rows: Sequence[StrategyRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.strategy,
                    row.n_slots,
                    _fmt(row.accuracy),
                    _fmt(row.compute_ratio),
                    _fmt(row.sim_time),
                    _fmt(row.throughput),
                    _fmt(row.speedup),
                ]
            )


def write_samples_csv(path, log: StepLog) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLES_HEADER)
        for res in log.samples:
            writer.writerow([res.sample_id, _fmt(res.label), res.prediction, res.exit_layer, res.exit_stage])


def write_steps_csv(path, logs: Sequence[StepLog]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEPS_HEADER)
        for log in logs:
            for rec in log.steps:
                writer.writerow([rec.step, log.strategy, rec.active])


def write_attention_csv(path, matrix: np.ndarray, tokens: Sequence[str]) -> None:
    """Token strings as the header row, one row per layer below."""
    if matrix.shape[1] != len(tokens):
        raise ValueError(f"{matrix.shape[1]} columns vs {len(tokens)} tokens")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(tokens)
        for row in matrix:
            writer.writerow([_fmt(float(x)) for x in row])
