"""Iterated shared-encoder text classifier.

One transformer encoder block is applied ``depth`` times to the hidden
state (all iterations share the same weights), and a single classifier
reads the sequence-start position after every iteration, so a prediction
distribution is available at each depth.  Residual connections use the
post-layer-norm ordering.

All forward functions accept either plain float64 arrays or autodiff
``Var`` operands for the parameters; shapes carry an optional leading
batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .exit_policy import ExitPolicy, STAGE_NONE, cwb_decide
from .numerics import DTYPE

NEG_INF = float("-inf")

EXIT_LOGIT_INIT = 4.0
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for the shared-encoder classifier."""

    depth: int = 12
    hidden: int = 64
    heads: int = 4
    ffn: int = 256
    vocab: int = 512
    seq_len: int = 32
    classes: int = 3

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.classes < 2:
            raise ValueError(f"classes must be >= 2, got {self.classes}")
        if self.seq_len < 2:
            raise ValueError(f"seq_len must be >= 2, got {self.seq_len}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class TokenSequence:
    """Fixed-length token ids plus a mask marking real positions.

    Position 0 holds the sequence-start token and is always unmasked.
    """

    ids: np.ndarray  # (seq_len,) integer ids
    mask: np.ndarray  # (seq_len,) bool, True on real tokens

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.ids.shape != self.mask.shape or self.ids.ndim != 1:
            raise ValueError("ids and mask must be 1-D and equally long")
        if not self.mask[0]:
            raise ValueError("position 0 (sequence start) must be unmasked")


@dataclass
class LayerTrace:
    """Per-layer classifier outputs collected during one forward pass."""

    probs: list = field(default_factory=list)  # each (classes,)
    labels: list = field(default_factory=list)  # argmax per layer, lowest-index ties
    cls_attention: Optional[list] = None  # head-averaged start-position rows
    exit_stage: str = STAGE_NONE


# tensor fields in serialization order; 1-D tensors are stored as 1 x n
TENSOR_FIELDS = (
    "tok_emb",
    "pos_emb",
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "ln1_gain",
    "ln1_bias",
    "w_fc1",
    "b_fc1",
    "w_fc2",
    "b_fc2",
    "ln2_gain",
    "ln2_bias",
    "w_cls",
    "b_cls",
    "exit_logits",
)


@dataclass
class Parameters:
    """The single shared weight set (one encoder block, reused every iteration)."""

    config: ModelConfig
    tok_emb: np.ndarray
    pos_emb: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    w_fc1: np.ndarray
    b_fc1: np.ndarray
    w_fc2: np.ndarray
    b_fc2: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray
    w_cls: np.ndarray
    b_cls: np.ndarray
    exit_logits: np.ndarray  # (depth - 1,) loss-weight logits

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "Parameters":
        rng = np.random.default_rng(seed)
        h, f, v, s, c = config.hidden, config.ffn, config.vocab, config.seq_len, config.classes

        def normal(*shape):
            return rng.normal(0.0, INIT_STD, size=shape).astype(DTYPE)

        return cls(
            config=config,
            tok_emb=normal(v, h),
            pos_emb=normal(s, h),
            w_q=normal(h, h),
            w_k=normal(h, h),
            w_v=normal(h, h),
            w_o=normal(h, h),
            ln1_gain=np.ones(h, dtype=DTYPE),
            ln1_bias=np.zeros(h, dtype=DTYPE),
            w_fc1=normal(h, f),
            b_fc1=np.zeros(f, dtype=DTYPE),
            w_fc2=normal(f, h),
            b_fc2=np.zeros(h, dtype=DTYPE),
            ln2_gain=np.ones(h, dtype=DTYPE),
            ln2_bias=np.zeros(h, dtype=DTYPE),
            w_cls=normal(h, c),
            b_cls=np.zeros(c, dtype=DTYPE),
            exit_logits=np.full(config.depth - 1, EXIT_LOGIT_INIT, dtype=DTYPE),
        )

    def tensor_items(self) -> list[tuple[str, np.ndarray]]:
        """(name, array) pairs in a fixed order for serialization and optimizers."""
        return [(name, getattr(self, name)) for name in TENSOR_FIELDS]

    def shared_scalar_count(self) -> int:
        """Scalars in the shared block (embeddings, encoder, classifier).

        Excludes the per-layer loss-weight logits, whose count tracks the
        configured depth; everything counted here is depth-independent.
        """
        return sum(arr.size for name, arr in self.tensor_items() if name != "exit_logits")

    def copy(self) -> "Parameters":
        kwargs = {name: getattr(self, name).copy() for name in TENSOR_FIELDS}
        return Parameters(config=self.config, **kwargs)

    def as_vars(self, tape) -> "Parameters":
        """Mirror of this parameter set with every tensor wrapped as a tape leaf."""
        kwargs = {name: tape.leaf(getattr(self, name), name=name) for name in TENSOR_FIELDS}
        return Parameters(config=self.config, **kwargs)


def _as_batch(ids, mask) -> tuple[np.ndarray, np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
        mask = mask[None, :]
    return ids, mask, squeeze


def embed(ids, mask, params: Parameters):
    """Token plus positional embeddings; padded positions are zeroed.

    ``ids``/``mask`` may be (seq_len,) or (batch, seq_len); the output is
    (seq_len, hidden) or (batch, seq_len, hidden) to match.
    """
    ids, mask, squeeze = _as_batch(ids, mask)
    vocab = value_of(params.tok_emb).shape[0]
    if np.any(ids < 0) or np.any(ids >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise ValueError(f"token id {bad} out of range for vocab size {vocab}")
    seq_len = ids.shape[1]
    tok = ad.gather_rows(params.tok_emb, ids)  # (B, S, H)
    pos = params.pos_emb
    if seq_len != value_of(pos).shape[0]:
        # trim the position table via transposes (keeps Var support)
        pos = ad.transpose_last2(ad.slice_last(ad.transpose_last2(pos), 0, seq_len))
    h = ad.add(tok, pos)
    h = ad.mul(h, mask[..., None].astype(DTYPE))
    if squeeze:
        h = ad.reshape(h, value_of(h).shape[1:])
    return h


def attention_mask_bias(mask: np.ndarray) -> np.ndarray:
    """(B, 1, S) additive bias: 0 on real keys, -inf on padded keys."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    return np.where(mask, 0.0, NEG_INF)[:, None, :]


def encoder_step(h, mask, params: Parameters):
    """One encoder iteration: masked multi-head self-attention + FFN.

    Returns ``(h_next, attention)`` where ``attention`` has shape
    (batch, heads, seq_len, seq_len) (leading axis dropped for unbatched
    input).  Padded key positions receive -inf attention logits; output
    rows at padded positions are never consumed downstream.
    """
    hv = value_of(h)
    squeeze = hv.ndim == 2
    if squeeze:
        h = ad.reshape(h, (1,) + hv.shape)
    cfg = params.config
    bias = attention_mask_bias(mask)
    scale = 1.0 / np.sqrt(cfg.head_dim)

    q = ad.matmul(h, params.w_q)
    k = ad.matmul(h, params.w_k)
    v = ad.matmul(h, params.w_v)

    ctx_parts = []
    attn_heads = []
    for head in range(cfg.heads):
        lo, hi = head * cfg.head_dim, (head + 1) * cfg.head_dim
        qh = ad.slice_last(q, lo, hi)
        kh = ad.slice_last(k, lo, hi)
        vh = ad.slice_last(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose_last2(kh)), scale)
        scores = ad.add(scores, bias)
        weights = ad.softmax(scores)
        ctx_parts.append(ad.matmul(weights, vh))
        attn_heads.append(value_of(weights))
    ctx = ad.concat_last(ctx_parts)
    attn = np.stack(attn_heads, axis=1)  # (B, heads, S, S)

    h1 = ad.layer_norm(ad.add(h, ad.matmul(ctx, params.w_o)), params.ln1_gain, params.ln1_bias)
    ff = ad.add(ad.matmul(h1, params.w_fc1), params.b_fc1)
    ff = ad.add(ad.matmul(ad.gelu(ff), params.w_fc2), params.b_fc2)
    h2 = ad.layer_norm(ad.add(h1, ff), params.ln2_gain, params.ln2_bias)

    if squeeze:
        h2 = ad.reshape(h2, value_of(h2).shape[1:])
        attn = attn[0]
    return h2, attn


def classify(h, params: Parameters):
    """Probability distribution from the sequence-start hidden row.

    ``h`` is (seq_len, hidden) or (batch, seq_len, hidden); the result is
    (classes,) or (batch, classes).
    """
    cls = ad.select_position(h, 0)
    logits = ad.add(ad.matmul(_ensure_2d(cls), params.w_cls), params.b_cls)
    p = ad.softmax(logits)
    if value_of(h).ndim == 2:
        p = ad.reshape(p, (value_of(p).shape[-1],))
    return p


def _ensure_2d(x):
    if value_of(x).ndim == 1:
        return ad.reshape(x, (1,) + value_of(x).shape)
    return x


def predicted_label(p: np.ndarray) -> int:
    """Argmax with lowest-index tie-break (np.argmax's first occurrence)."""
    return int(np.argmax(p))


def forward_with_trace(
    x: TokenSequence,
    params: Parameters,
    policy: ExitPolicy | None = None,
    *,
    depth: int | None = None,
    collect_attention: bool = False,
) -> tuple[int, int, LayerTrace]:
    """Iterate the encoder on one sample, classifying after every step.

    With a policy, inference stops at the first exit signal; otherwise
    all ``depth`` iterations run and the final distribution decides.
    Returns ``(prediction, exit_layer, trace)`` with exit_layer in
    [1, depth].
    """
    cfg = params.config
    d = cfg.depth if depth is None else depth
    if not 1 <= d <= cfg.depth:
        raise ValueError(f"depth override {d} outside [1, {cfg.depth}]")
    ids = x.ids[None, :]
    mask = x.mask[None, :]
    h = embed(ids, mask, params)
    trace = LayerTrace(cls_attention=[] if collect_attention else None)
    for layer in range(1, d + 1):
        h, attn = encoder_step(h, mask, params)
        p = value_of(classify(h, params))[0]
        trace.probs.append(p)
        trace.labels.append(predicted_label(p))
        if collect_attention:
            trace.cls_attention.append(attn[0].mean(axis=0)[0])
        if policy is not None:
            decision = cwb_decide(trace.probs, policy, layer, d)
            if decision.exit:
                trace.exit_stage = decision.stage
                return trace.labels[-1], layer, trace
    return trace.labels[-1], d, trace


def forward_all_layers(ids, mask, params: Parameters, depth: int | None = None):
    """Batched full-depth pass returning the per-layer distributions.

    Used by training and batched evaluation; returns a list of
    ``depth`` prob arrays of shape (batch, classes).
    """
    d = params.config.depth if depth is None else depth
    h = embed(ids, mask, params)
    probs = []
    for _ in range(d):
        h, _ = encoder_step(h, mask, params)
        probs.append(classify(h, params))
    return probs
