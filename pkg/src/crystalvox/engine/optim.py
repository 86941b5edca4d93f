"""Bias-corrected Adam."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def adam_step(params, grads, state: dict, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One in-place Adam update over parallel lists of arrays.

    ``state`` holds the step counter ``t`` and first/second moment buffers;
    pass the same dict on every call.
    """
    if "t" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    """Optimizer bound to a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def step(self):
        adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            self.lr, self.beta1, self.beta2, self.eps,
        )

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
