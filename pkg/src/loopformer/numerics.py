"""Dense float64 numeric primitives for the toy transformer.

Everything in this module is a pure function over ``numpy`` float64
arrays and is bitwise deterministic: identical inputs produce identical
outputs across runs.  A "matrix" is a 2-D array; most ops also accept a
stack of matrices (leading batch axes) and work along the last axis or
last two axes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

DTYPE = np.float64

# variance floor in layer_norm and probability floor in cross_entropy
LAYER_NORM_EPS = 1e-12
PROB_CLAMP = 1e-12

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_f64(x) -> np.ndarray:
    """View ``x`` as a float64 array (no copy when already one)."""
    return np.asarray(x, dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check.

    Accepts stacks of matrices; the contraction is always between the
    last axis of ``a`` and the second-to-last axis of ``b``.
    """
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def softmax(x, axis: int = -1) -> np.ndarray:
    """Stable softmax along ``axis`` (max subtraction per slice).

    Rows of ``-inf`` entries get exactly zero weight; every slice sums
    to 1 as long as it has at least one finite entry.
    """
    x = as_f64(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    x = as_f64(x)
    gain = as_f64(gain)
    bias = as_f64(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match feature size {x.shape[-1]}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    # reciprocal multiply, not divide: keeps the value bitwise identical to
    # the autodiff path, which reuses the reciprocal in its backward pass
    xhat = (x - mu) * (1.0 / np.sqrt(var + eps))
    return xhat * gain + bias


def gelu(x) -> np.ndarray:
    """Exact Gaussian-error-linear unit: x * Phi(x) with Phi the normal CDF."""
    x = as_f64(x)
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x) -> np.ndarray:
    """d/dx of gelu: Phi(x) + x * phi(x)."""
    x = as_f64(x)
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def sigmoid(x) -> np.ndarray:
    """Numerically safe logistic function."""
    return expit(as_f64(x))


def cross_entropy(p, label: int, clamp: float = PROB_CLAMP) -> float:
    """Negative log-probability of ``label`` under distribution ``p``.

    The picked probability is floored at ``clamp`` so one-hot misses
    stay finite.  Out-of-range labels are rejected.
    """
    p = as_f64(p)
    if p.ndim != 1:
        raise ValueError(f"cross_entropy expects a 1-D distribution, got shape {p.shape}")
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(float(p[label]), clamp)))
