"""Dense float32 array primitives used by the engine.

Tensors are plain C-contiguous ``numpy.float32`` arrays of rank 1 to 4.
Every function here is pure: inputs are never modified and outputs are
fresh arrays.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError

DTYPE = np.float32
MAX_RANK = 4


def as_tensor(x, *, check_finite: bool = False) -> np.ndarray:
    """Convert ``x`` to a contiguous float32 array of rank <= 4."""
    t = np.ascontiguousarray(x, dtype=DTYPE)
    if t.ndim > MAX_RANK:
        raise ShapeError(f"rank {t.ndim} exceeds the maximum of {MAX_RANK}")
    if check_finite and not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    return t


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return np.matmul(a, b, dtype=DTYPE)


def rowwise_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype, copy=False)


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Normalize each row over the last axis using the population variance."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return (centered / np.sqrt(var + eps) * gamma + beta).astype(x.dtype, copy=False)


def axis_pool(x: np.ndarray, axis: int, mode: str = "avg") -> np.ndarray:
    """Reduce ``axis`` to length 1 by arithmetic mean (``avg``) or maximum (``max``)."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} is invalid for a rank-{x.ndim} tensor")
    if mode == "avg":
        return x.mean(axis=axis, keepdims=True, dtype=x.dtype)
    if mode == "max":
        return x.max(axis=axis, keepdims=True)
    raise ValueError(f"unknown pooling mode {mode!r}")


def broadcast_mul(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Elementwise product where size-1 axes of ``a`` are repeated to match ``x``."""
    if a.ndim != x.ndim:
        raise ShapeError(f"rank mismatch: {x.shape} vs {a.shape}")
    for n, m in zip(x.shape, a.shape):
        if m != 1 and m != n:
            raise ShapeError(f"cannot broadcast {a.shape} onto {x.shape}")
    return x * a


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    return (0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))).astype(x.dtype, copy=False)


def window_1d(n: int, kind: str = "hann") -> np.ndarray:
    if n < 1:
        raise ValueError("window length must be >= 1")
    if n == 1:
        return np.ones(1, dtype=DTYPE)
    i = np.arange(n, dtype=np.float64)
    c = np.cos(2.0 * np.pi * i / (n - 1))
    if kind == "hann":
        v = 0.5 * (1.0 - c)
    elif kind == "hamming":
        v = 0.54 - 0.46 * c
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    return v.astype(DTYPE)


def window_2d(h: int, w: int, kind: str = "hann") -> np.ndarray:
    return np.outer(window_1d(h, kind), window_1d(w, kind)).astype(DTYPE)


def hann_window_2d(h: int, w: int) -> np.ndarray:
    """Separable Hann window; ``W[i, j] = v_h[i] * v_w[j]``."""
    return window_2d(h, w, "hann")
