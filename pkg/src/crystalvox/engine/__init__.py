"""Minimal dense-tensor engine with reverse-mode autodiff."""

from .tensor import Tensor, backward, concat, grad_scale, no_grad
from .ops import (
    batch_norm,
    bce_with_logits,
    conv3d,
    kl_diag_gaussian,
    leaky_relu,
    linear,
    mse_loss,
    relu,
    sigmoid,
    softmax_cross_entropy,
    trilinear_resize,
    trilinear_upsample,
)
from .optim import Adam, adam_step
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "Tensor",
    "adam_step",
    "backward",
    "batch_norm",
    "bce_with_logits",
    "concat",
    "conv3d",
    "grad_scale",
    "kl_diag_gaussian",
    "leaky_relu",
    "linear",
    "load_checkpoint",
    "mse_loss",
    "no_grad",
    "relu",
    "save_checkpoint",
    "sigmoid",
    "softmax_cross_entropy",
    "trilinear_resize",
    "trilinear_upsample",
]
