"""Minimal reverse-mode automatic differentiation over float64 arrays.

A :class:`Tape` records one node per primitive in execution order.  The
graph is feed-forward, so recording order is already topological and the
backward pass replays the list reversed, visiting each node exactly once.

Every op in this module accepts either plain arrays or :class:`Var`
operands.  With plain arrays it computes the identical forward value and
records nothing, so inference and training share a single code path.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .numerics import DTYPE


class GradCheckError(RuntimeError):
    """Raised when reverse-mode gradients come out non-finite."""


class Var:
    """A tape-recorded array: forward value plus accumulated gradient."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value, tape: "Tape", name: str | None = None):
        self.value = numerics.as_f64(value)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"

    # arithmetic sugar; each defers to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Execution-ordered record of primitives for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Var, object]] = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        return Var(value, self, name)

    def record(self, out: Var, backward) -> None:
        self._nodes.append((out, backward))

    def backward(self, out: Var) -> None:
        """Seed ``out`` with gradient 1 and replay the tape reversed.

        One-shot: the node list is released afterwards (this also breaks
        the Var<->closure reference cycles, so the recorded intermediates
        are reclaimed promptly instead of waiting for a gc cycle).
        """
        if out.tape is not self:
            raise ValueError("output Var belongs to a different tape")
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.value.shape}")
        out.grad = np.ones_like(out.value)
        for node, fn in reversed(self._nodes):
            if node.grad is not None:
                fn(node.grad)
        self._nodes.clear()


def value_of(x) -> np.ndarray:
    """Forward value of a Var or plain array."""
    return x.value if isinstance(x, Var) else numerics.as_f64(x)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    out = Var(out_v, tape)

    def backward(g):
        if isinstance(a, Var):
            a.accumulate(_unbroadcast(g, av.shape))
        if isinstance(b, Var):
            b.accumulate(_unbroadcast(g, bv.shape))

    tape.record(out, backward)
    return out


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    out = Var(out_v, tape)

    def backward(g):
        if isinstance(a, Var):
            a.accumulate(_unbroadcast(g, av.shape))
        if isinstance(b, Var):
            b.accumulate(-_unbroadcast(g, bv.shape))

    tape.record(out, backward)
    return out


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    out = Var(out_v, tape)

    def backward(g):
        if isinstance(a, Var):
            a.accumulate(_unbroadcast(g * bv, av.shape))
        if isinstance(b, Var):
            b.accumulate(_unbroadcast(g * av, bv.shape))

    tape.record(out, backward)
    return out


def scale(a, c: float):
    av = value_of(a)
    out_v = av * c
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(g * c)

    a.tape.record(out, backward)
    return out


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = numerics.matmul(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    out = Var(out_v, tape)

    def backward(g):
        if isinstance(a, Var):
            ga = np.matmul(g, np.swapaxes(bv, -1, -2))
            a.accumulate(_unbroadcast(ga, av.shape))
        if isinstance(b, Var):
            gb = np.matmul(np.swapaxes(av, -1, -2), g)
            b.accumulate(_unbroadcast(gb, bv.shape))

    tape.record(out, backward)
    return out


def transpose_last2(a):
    av = value_of(a)
    out_v = np.swapaxes(av, -1, -2)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(np.swapaxes(g, -1, -2))

    a.tape.record(out, backward)
    return out


def reshape(a, shape):
    av = value_of(a)
    out_v = av.reshape(shape)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(g.reshape(av.shape))

    a.tape.record(out, backward)
    return out


def slice_last(a, lo: int, hi: int):
    """Slice ``a[..., lo:hi]`` along the last axis."""
    av = value_of(a)
    out_v = av[..., lo:hi]
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        full = np.zeros_like(av)
        full[..., lo:hi] = g
        a.accumulate(full)

    a.tape.record(out, backward)
    return out


def concat_last(parts):
    """Concatenate along the last axis."""
    values = [value_of(p) for p in parts]
    out_v = np.concatenate(values, axis=-1)
    tape = _tape_of(*parts)
    if tape is None:
        return out_v
    out = Var(out_v, tape)
    sizes = [v.shape[-1] for v in values]

    def backward(g):
        lo = 0
        for part, size in zip(parts, sizes):
            if isinstance(part, Var):
                part.accumulate(g[..., lo : lo + size])
            lo += size

    tape.record(out, backward)
    return out


def select_position(a, index: int):
    """Pick one position along the second-to-last axis: ``a[..., index, :]``."""
    av = value_of(a)
    out_v = av[..., index, :]
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        full = np.zeros_like(av)
        full[..., index, :] = g
        a.accumulate(full)

    a.tape.record(out, backward)
    return out


def gather_rows(table, ids):
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    tv = value_of(table)
    ids = np.asarray(ids)
    out_v = tv[ids]
    if not isinstance(table, Var):
        return out_v
    out = Var(out_v, table.tape)

    def backward(g):
        full = np.zeros_like(tv)
        np.add.at(full, ids, g)
        table.accumulate(full)

    table.tape.record(out, backward)
    return out


def pick(a, index: int):
    """Scalar element of a flat vector (0-d result)."""
    av = value_of(a)
    out_v = np.asarray(av[index], dtype=DTYPE)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        full = np.zeros_like(av)
        full[index] = g
        a.accumulate(full)

    a.tape.record(out, backward)
    return out


def sum_all(a):
    av = value_of(a)
    out_v = np.asarray(av.sum(), dtype=DTYPE)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(np.broadcast_to(g, av.shape).copy())

    a.tape.record(out, backward)
    return out


def softmax(a, axis: int = -1):
    av = value_of(a)
    out_v = numerics.softmax(av, axis=axis)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        inner = (g * out_v).sum(axis=axis, keepdims=True)
        a.accumulate(out_v * (g - inner))

    a.tape.record(out, backward)
    return out


def layer_norm(a, gain, bias, eps: float = numerics.LAYER_NORM_EPS):
    av, gv, bv = value_of(a), value_of(gain), value_of(bias)
    tape = _tape_of(a, gain, bias)
    if tape is None:
        return numerics.layer_norm(av, gv, bv, eps)
    mu = av.mean(axis=-1, keepdims=True)
    var = av.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (av - mu) * inv_std
    out = Var(xhat * gv + bv, tape)

    def backward(g):
        if isinstance(gain, Var):
            gain.accumulate(_unbroadcast(g * xhat, gv.shape))
        if isinstance(bias, Var):
            bias.accumulate(_unbroadcast(g, bv.shape))
        if isinstance(a, Var):
            gx = g * gv
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a.accumulate(inv_std * (gx - m1 - xhat * m2))

    tape.record(out, backward)
    return out


def gelu(a):
    av = value_of(a)
    out_v = numerics.gelu(av)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(g * numerics.gelu_grad(av))

    a.tape.record(out, backward)
    return out


def sigmoid(a):
    av = value_of(a)
    out_v = numerics.sigmoid(av)
    if not isinstance(a, Var):
        return out_v
    out = Var(out_v, a.tape)

    def backward(g):
        a.accumulate(g * out_v * (1.0 - out_v))

    a.tape.record(out, backward)
    return out


def cross_entropy(p, label: int, clamp: float = numerics.PROB_CLAMP):
    """Scalar ``-log p[label]`` with the same clamp as the plain op."""
    pv = value_of(p)
    if not 0 <= label < pv.shape[-1]:
        raise ValueError(f"label {label} out of range for {pv.shape[-1]} classes")
    picked = float(pv[label])
    out_v = np.asarray(-np.log(max(picked, clamp)), dtype=DTYPE)
    if not isinstance(p, Var):
        return out_v
    out = Var(out_v, p.tape)

    def backward(g):
        full = np.zeros_like(pv)
        if picked >= clamp:
            full[label] = -g / picked
        p.accumulate(full)

    p.tape.record(out, backward)
    return out


def cross_entropy_mean(p, labels, clamp: float = numerics.PROB_CLAMP):
    """Mean of ``-log p[i, labels[i]]`` over a batch (rows of ``p``)."""
    pv = value_of(p)
    labels = np.asarray(labels)
    n = pv.shape[0]
    picked = pv[np.arange(n), labels]
    clamped = np.maximum(picked, clamp)
    out_v = np.asarray(-np.log(clamped).mean(), dtype=DTYPE)
    if not isinstance(p, Var):
        return out_v
    out = Var(out_v, p.tape)

    def backward(g):
        full = np.zeros_like(pv)
        coef = np.where(picked >= clamp, -1.0 / (n * clamped), 0.0)
        full[np.arange(n), labels] = g * coef
        p.accumulate(full)

    p.tape.record(out, backward)
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f,
    params,
    *,
    step: float = 1e-5,
    max_coords_per_param: int = 24,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``f`` must map its parameter arrays (Vars or plain float64 arrays) to
    a scalar through ops in this module, so both routes share one forward
    implementation.  Error per coordinate is
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``; coordinates are sampled
    when a parameter has more than ``max_coords_per_param`` entries.
    """
    params = [numerics.as_f64(p).copy() for p in params]
    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    out = f(*leaves)
    tape.backward(out)
    grads = [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise GradCheckError("reverse-mode gradient contains non-finite entries")

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for pi, p in enumerate(params):
        size = p.size
        if size <= max_coords_per_param:
            coords = np.arange(size)
        else:
            coords = np.sort(rng.choice(size, size=max_coords_per_param, replace=False))
        for c in coords:
            orig = p.flat[c]
            p.flat[c] = orig + step
            f_plus = float(value_of(f(*params)))
            p.flat[c] = orig - step
            f_minus = float(value_of(f(*params)))
            p.flat[c] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            g_ad = float(grads[pi].flat[c])
            err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            worst = max(worst, err)
    return worst
