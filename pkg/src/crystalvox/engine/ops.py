"""Differentiable layers and losses for volumetric networks.

Convolutions are evaluated as one BLAS contraction per kernel offset, which
keeps memory flat (no im2col buffer) while the arithmetic stays in matmuls.
All tensors use the layout [batch, channels, depth, height, width].
"""

from __future__ import annotations

import functools
from itertools import product

import numpy as np

from ..errors import BatchTooSmallError, ShapeMismatchError
from .tensor import Tensor

try:  # JIT kernels cover the small-channel, stride-1 regime
    from . import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

_SPATIAL_AXES = (0, 2, 3, 4)
_JIT_CHANNEL_LIMIT = 128


def _norm_padding(padding) -> tuple[tuple[int, int], ...]:
    """Accept an int, one (lo, hi) pair, or three pairs (one per axis)."""
    if isinstance(padding, int):
        return ((padding, padding),) * 3
    padding = tuple(padding)
    if len(padding) == 2 and all(isinstance(p, int) for p in padding):
        return (padding,) * 3
    if len(padding) == 3:
        return tuple((int(l), int(h)) for l, h in padding)
    raise ValueError(f"bad padding spec {padding!r}")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation; output side = floor((in + pad_lo + pad_hi - k) / stride) + 1."""
    if x.data.ndim != 5 or weight.data.ndim != 5:
        raise ShapeMismatchError("conv3d expects 5-D input and weight")
    n, cin, d, h, w = x.data.shape
    cout, cin_w, kd, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeMismatchError(f"input channels {cin} != weight channels {cin_w}")
    pads = _norm_padding(padding)
    dims_out = []
    for size, k, (pl, ph) in zip((d, h, w), (kd, kh, kw), pads):
        out = (size + pl + ph - k) // stride + 1
        if out < 1:
            raise ShapeMismatchError("conv3d output would be empty")
        dims_out.append(out)
    do, ho, wo = dims_out

    xp = np.pad(x.data, ((0, 0), (0, 0)) + pads)
    s = stride
    use_jit = (
        _kernels is not None
        and s == 1
        and cin * cout <= _JIT_CHANNEL_LIMIT
        and x.data.dtype in (np.float32, np.float64)
    )
    if use_jit:
        out = np.zeros((n, cout, do, ho, wo), dtype=x.data.dtype)
        _kernels.conv_fwd_s1(xp, weight.data, out)
    else:
        # accumulate in channels-last layout so each offset is a single matmul
        out_m = np.zeros((n, do, ho, wo, cout), dtype=x.data.dtype)
        for i, j, k in product(range(kd), range(kh), range(kw)):
            xs = xp[:, :, i:i + s * do:s, j:j + s * ho:s, k:k + s * wo:s]
            out_m += np.tensordot(xs, weight.data[:, :, i, j, k], axes=([1], [1]))
        out = np.ascontiguousarray(np.moveaxis(out_m, -1, 1))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1, 1)

    def backward(g):
        need_x = x.requires_grad
        need_w = weight.requires_grad
        dxp = np.zeros_like(xp) if (need_x or use_jit) else None
        dw = np.zeros_like(weight.data) if (need_w or use_jit) else None
        if use_jit and (need_x or need_w):
            _kernels.conv_bwd_s1(xp, weight.data, np.ascontiguousarray(g),
                                 dxp, dw, need_x, need_w)
        else:
            gm = np.moveaxis(g, 1, -1)
            for i, j, k in product(range(kd), range(kh), range(kw)):
                sl = (slice(None), slice(None), slice(i, i + s * do, s),
                      slice(j, j + s * ho, s), slice(k, k + s * wo, s))
                if need_w:
                    dw[:, :, i, j, k] = np.tensordot(gm, xp[sl], axes=([0, 1, 2, 3], [0, 2, 3, 4]))
                if need_x:
                    dxs = np.tensordot(gm, weight.data[:, :, i, j, k], axes=([4], [0]))
                    dxp[sl] += np.moveaxis(dxs, -1, 1)
        if need_x:
            (pl0, _), (pl1, _), (pl2, _) = pads
            x.accumulate(dxp[:, :, pl0:pl0 + d, pl1:pl1 + h, pl2:pl2 + w])
        if need_w:
            weight.accumulate(dw)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=_SPATIAL_AXES))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.result(out, parents, backward)


@functools.lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """1-D linear interpolation matrix, align-corners-false with edge clamping."""
    a = np.zeros((n_out, n_in))
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    a[np.arange(n_out), i0] += 1.0 - w1
    a[np.arange(n_out), i1] += w1
    return a


def _apply_axis_matrices(data: np.ndarray, mats) -> np.ndarray:
    out = data
    for axis, m in zip((2, 3, 4), mats):
        out = np.moveaxis(np.tensordot(out, m, axes=([axis], [1])), -1, axis)
    return np.ascontiguousarray(out)


def trilinear_resize(x: Tensor, out_sides: tuple[int, int, int]) -> Tensor:
    """Separable trilinear interpolation to an arbitrary spatial size."""
    if x.data.ndim != 5:
        raise ShapeMismatchError("trilinear_resize expects 5-D input")
    in_sides = x.data.shape[2:]
    mats = [_interp_matrix(ni, no).astype(x.data.dtype)
            for ni, no in zip(in_sides, out_sides)]
    out = _apply_axis_matrices(x.data, mats)

    def backward(g):
        if x.requires_grad:
            x.accumulate(_apply_axis_matrices(g, [m.T for m in mats]))

    return Tensor.result(out, (x,), backward)


def trilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    if factor < 2:
        raise ValueError("factor must be >= 2")
    d, h, w = x.data.shape[2:]
    return trilinear_resize(x, (d * factor, h * factor, w * factor))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalize per channel over batch and spatial dims.

    Training mode uses batch statistics and updates the running buffers in
    place (unbiased variance, like the usual framework convention); eval mode
    normalizes with the running buffers.
    """
    if x.data.ndim != 5:
        raise ShapeMismatchError("batch_norm expects 5-D input")
    c = x.data.shape[1]
    shape = (1, c, 1, 1, 1)
    if training:
        count = x.data.size // c
        if count <= 1:
            raise BatchTooSmallError("need more than one value per channel to normalize")
        mean = x.data.mean(axis=_SPATIAL_AXES)
        var = x.data.var(axis=_SPATIAL_AXES)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (count / (count - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=_SPATIAL_AXES))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=_SPATIAL_AXES))
        if x.requires_grad:
            gs = gamma.data.reshape(shape) * inv_std.reshape(shape)
            if training:
                mean_g = g.mean(axis=_SPATIAL_AXES).reshape(shape)
                mean_gx = (g * xhat).mean(axis=_SPATIAL_AXES).reshape(shape)
                x.accumulate(gs * (g - mean_g - xhat * mean_gx))
            else:
                x.accumulate(gs * g)

    return Tensor.result(out, (x, gamma, beta), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return Tensor.result(np.where(mask, x.data, 0), (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * np.where(mask, 1.0, slope).astype(x.data.dtype))

    return Tensor.result(np.where(mask, x.data, slope * x.data), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    out_data = _stable_sigmoid(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * out_data * (1.0 - out_data))

    return Tensor.result(out_data, (x,), backward)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) never overflows; the two branches share it
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map; weight has shape (in_features, out_features)."""
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeMismatchError(f"linear {x.data.shape} x {weight.data.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight.accumulate(x.data.T @ g)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.result(out, parents, backward)


# -- losses ----------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeMismatchError(f"mse {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        if pred.requires_grad:
            pred.accumulate(g * 2.0 * diff / n)
        if target.requires_grad:
            target.accumulate(g * -2.0 * diff / n)

    return Tensor.result(np.mean(diff * diff), (pred, target), backward)


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(q || N(0, I)) for a diagonal Gaussian: sum over dims, mean over batch."""
    if mu.data.shape != logvar.data.shape:
        raise ShapeMismatchError("mu / logvar shape mismatch")
    batch = mu.data.shape[0] if mu.data.ndim > 1 else 1
    ev = np.exp(logvar.data)
    val = 0.5 * np.sum(mu.data**2 + ev - 1.0 - logvar.data) / batch

    def backward(g):
        if mu.requires_grad:
            mu.accumulate(g * mu.data / batch)
        if logvar.requires_grad:
            logvar.accumulate(g * 0.5 * (ev - 1.0) / batch)

    return Tensor.result(np.asarray(val, dtype=mu.data.dtype), (mu, logvar), backward)


def bce_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Per-element sigmoid binary cross entropy, mean-reduced.

    Uses the log-sum-exp form max(x, 0) - x t + log(1 + exp(-|x|)), stable for
    large logits of either sign.
    """
    if logits.data.shape != target.data.shape:
        raise ShapeMismatchError(
            f"bce logits {logits.data.shape} vs target {target.data.shape}"
        )
    x, t = logits.data, target.data
    n = x.size
    val = np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x))))

    def backward(g):
        if logits.requires_grad:
            logits.accumulate(g * (_stable_sigmoid(x) - t) / n)
        if target.requires_grad:
            target.accumulate(g * -x / n)

    return Tensor.result(np.asarray(val, dtype=x.dtype), (logits, target), backward)


def softmax_cross_entropy(logits: Tensor, target: Tensor) -> Tensor:
    """Softmax cross entropy over the class axis (axis 1), mean over the rest.

    Ablation alternative to bce_with_logits for one-hot targets.
    """
    if logits.data.shape != target.data.shape:
        raise ShapeMismatchError("softmax_ce shape mismatch")
    x, t = logits.data, target.data
    xmax = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - xmax).sum(axis=1, keepdims=True)) + xmax
    count = x.size // x.shape[1]
    val = np.sum(t * (lse - x)) / count
    soft = np.exp(x - lse)

    def backward(g):
        if logits.requires_grad:
            logits.accumulate(g * (soft * t.sum(axis=1, keepdims=True) - t) / count)

    return Tensor.result(np.asarray(val, dtype=x.dtype), (logits, target), backward)
