"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar-valued fn, element by element (f64)."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(x)
        flat[i] = orig - eps
        f_minus = fn(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_op(build_loss, arrays: list[np.ndarray], eps: float = 1e-5) -> float:
    """Compare analytic and numeric gradients of a scalar graph.

    ``build_loss`` maps a list of f64 numpy arrays to a scalar Tensor; the
    return value is the worst relative error across all inputs.
    """
    tensors = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    loss = build_loss(tensors)
    backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        def scalar_fn(x, i=i):
            probe = [Tensor(a.data.copy()) for a in tensors]
            probe[i] = Tensor(x)
            return float(build_loss(probe).data)

        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(scalar_fn, t.data.copy(), eps)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
