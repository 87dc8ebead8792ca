"""Core tensor operations: convolution, pooling, softmax, cross-entropy.

Convolution uses cross-correlation semantics (no kernel flip) with zero
padding, matching deep-learning convention.  All reductions accumulate in
float64 regardless of input storage width.  The public single-image ops
validate their arguments; the *_batch variants skip checks and are meant
for inner training loops.
"""

import numpy as np

from . import kernels

LOG_FLOOR = 1e-12


def conv2d(x, w, stride=1, padding=0):
    """Correlate [C_in, H, W] with kernels [C_out, C_in, k, k].

    Output spatial extent is floor((H + 2*padding - k) / stride) + 1.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError(f"expected 3-d input and 4-d kernels, got {x.ndim}-d and {w.ndim}-d")
    if x.shape[0] != w.shape[1]:
        raise ValueError(
            f"input has {x.shape[0]} channels but kernels expect {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if kh > x.shape[1] + 2 * padding or kw > x.shape[2] + 2 * padding:
        raise ValueError("kernel larger than padded input")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    return kernels.conv2d_forward(x[None], w, stride, padding)[0]


def maxpool2d(x, k, stride):
    """Max over k*k windows of [C, H, W], stepped by stride."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected 3-d input, got {x.ndim}-d")
    if k < 1 or stride < 1:
        raise ValueError("k and stride must be >= 1")
    if k > x.shape[1] or k > x.shape[2]:
        raise ValueError("pooling window exceeds input extent")
    return kernels.maxpool2d_forward(x[None], k, stride)[0][0]


def softmax(logits, temperature=1.0):
    """Temperature softmax of a 1-d logit vector, max-subtracted for safety."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ValueError("logits must be a non-empty 1-d vector")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_batch(logits, temperature=1.0):
    """Row-wise temperature softmax of [N, K] logits (no validation)."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(p_target, p_model, floor=LOG_FLOOR):
    """-sum(p_target * log(p_model)) with the log clamped at `floor`."""
    p = np.asarray(p_target, dtype=np.float64)
    q = np.asarray(p_model, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"probability vectors must match in length, got {p.shape} vs {q.shape}")
    for name, v in (("target", p), ("model", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-6:
            raise ValueError(f"{name} is not a probability vector")
    return float(-(p * np.log(np.maximum(q, floor))).sum())


def cross_entropy_batch(p_target, p_model, floor=LOG_FLOOR):
    """Mean cross-entropy over rows of two [N, K] probability arrays."""
    logq = np.log(np.maximum(p_model, floor))
    return float(-(p_target * logq).sum(axis=-1).mean())


def one_hot(labels, k):
    out = np.zeros((len(labels), k))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def relu(x):
    return np.maximum(x, 0.0)
