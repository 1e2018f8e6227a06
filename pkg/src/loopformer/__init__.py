"""Adaptive-depth text classifier with early exit and slot-refill batching."""

from .exit_policy import ExitDecision, ExitPolicy, cwb_decide, puzzlement, stage1_exit, stage2_exit
from .model import LayerTrace, ModelConfig, Parameters, TokenSequence, forward_with_trace
from .scheduler import (
    CostModel,
    StepLog,
    compare_strategies,
    compute_ratio,
    run_algorithm1,
    run_case1,
    run_case2,
    run_case3,
    run_case4,
    simulate_latency,
)
from .training import TrainConfig, TrainingDiverged, exit_weights, layer_losses, total_loss, train

__version__ = "0.1.0"

__all__ = [
    "CostModel",
    "ExitDecision",
    "ExitPolicy",
    "LayerTrace",
    "ModelConfig",
    "Parameters",
    "StepLog",
    "TokenSequence",
    "TrainConfig",
    "TrainingDiverged",
    "compare_strategies",
    "compute_ratio",
    "cwb_decide",
    "exit_weights",
    "forward_with_trace",
    "layer_losses",
    "puzzlement",
    "run_algorithm1",
    "run_case1",
    "run_case2",
    "run_case3",
    "run_case4",
    "simulate_latency",
    "stage1_exit",
    "stage2_exit",
    "total_loss",
    "train",
]
