"""Two-stage early-exit decisions over a classifier's per-layer outputs.

Stage 1 compares the normalized entropy ("puzzlement") of the newest
probability distribution against a threshold.  Stage 2, consulted only
when stage 1 does not fire, looks for a settled trend across the most
recent ``window`` distributions.  A forced exit applies at the final
layer when neither stage fires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CRITERIA = ("bias-trend", "range", "stable-label")

STAGE_NONE = "none"
STAGE_1 = "stage1"
STAGE_2 = "stage2"
STAGE_FORCED = "forced"


@dataclass(frozen=True)
class ExitPolicy:
    """Knobs for the two-stage exit decision.

    ``window`` may be ``math.inf`` to disable stage 2 entirely.
    ``range_eps`` only matters for the "range" criterion: the largest
    per-class spread tolerated across the window.
    """

    delta: float
    window: float = 8
    criterion: str = "bias-trend"
    range_eps: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if math.isfinite(self.window) and int(self.window) != self.window:
            raise ValueError(f"window must be an integer or inf, got {self.window}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.range_eps <= 0:
            raise ValueError(f"range_eps must be > 0, got {self.range_eps}")


@dataclass(frozen=True)
class ExitDecision:
    exit: bool
    stage: str


def puzzlement(p) -> float:
    """Normalized entropy of ``p``: 0 for one-hot, 1 for uniform.

    Computed as ``sum(p * log p) / log(1/C)`` with ``0 * log 0 := 0``.
    The base of the log cancels in the ratio; natural log is used.
    """
    p = np.asarray(p, dtype=float)
    n_classes = p.shape[-1]
    if p.ndim != 1 or n_classes < 2:
        raise ValueError(f"puzzlement needs a 1-D distribution over >= 2 classes, got shape {p.shape}")
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(terms.sum() / math.log(1.0 / n_classes)) + 0.0  # avoid -0.0


def stage1_exit(p, delta: float) -> bool:
    """True iff puzzlement drops strictly below ``delta``."""
    return puzzlement(p) < delta


def stage2_exit(history: Sequence[np.ndarray], policy: ExitPolicy) -> bool:
    """Evaluate the window criterion over the trailing ``window`` entries.

    ``history`` is the chronological list of per-layer probability
    vectors seen so far; fewer entries than the window means no exit.
    """
    if len(history) < policy.window:
        return False
    recent = np.stack([np.asarray(p, dtype=float) for p in history[-int(policy.window) :]])
    labels = recent.argmax(axis=1)
    if policy.criterion == "bias-trend":
        if not np.all(labels == labels[0]):
            return False
        top = recent[:, labels[0]]
        return bool(np.all(np.diff(top) >= 0.0))
    if policy.criterion == "range":
        spread = recent.max(axis=0) - recent.min(axis=0)
        return bool(spread.max() < policy.range_eps)
    # stable-label
    return bool(np.all(labels == labels[0]))


def cwb_decide(history: Sequence[np.ndarray], policy: ExitPolicy, layer: int, depth: int) -> ExitDecision:
    """Full two-stage decision for layer ``layer`` of ``depth``.

    Stage 1 is consulted first on the newest distribution; stage 2 only
    when stage 1 declines; the final layer forces an exit.  Pure: the
    result depends only on the arguments.
    """
    if not history:
        raise ValueError("cwb_decide needs at least one recorded distribution")
    if stage1_exit(history[-1], policy.delta):
        return ExitDecision(True, STAGE_1)
    if stage2_exit(history, policy):
        return ExitDecision(True, STAGE_2)
    if layer == depth:
        return ExitDecision(True, STAGE_FORCED)
    return ExitDecision(False, STAGE_NONE)
