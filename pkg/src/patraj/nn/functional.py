"""Elementwise activations and the binary cross-entropy loss."""

import numpy as np

from ..errors import NumericalIntegrityError

BCE_EPS = 1e-7


def sigmoid(x):
    x = np.asarray(x)
    # tanh form avoids overflow in exp for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0, x)


def mish(x):
    """x * tanh(softplus(x))."""
    x = np.asarray(x)
    return x * np.tanh(softplus(x))


def mish_grad(x):
    x = np.asarray(x)
    t = np.tanh(softplus(x))
    return t + x * (1.0 - t * t) * sigmoid(x)


def bce_loss(p, y, eps=BCE_EPS):
    """Mean binary cross entropy with probabilities clamped to [eps, 1 - eps]."""
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def check_finite(arr, where=""):
    if not np.all(np.isfinite(arr)):
        raise NumericalIntegrityError(f"non-finite values produced by {where or 'operation'}")
    return arr
