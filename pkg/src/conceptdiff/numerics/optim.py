"""First-order optimizers over lists of parameter tensors."""

from __future__ import annotations

import numpy as np

from conceptdiff.numerics.tensor import Tensor


class AdamState:
    """Per-parameter moment buffers plus a shared step counter."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], state: AdamState):
    """One Adam update with bias correction; clears grads afterwards."""
    if len(params) != len(state.m):
        raise ValueError(
            f"state tracks {len(state.m)} params, got {len(params)}"
        )
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"param {i} has no gradient; run backward first")
        g = p.grad
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


def sgd_step(params: list[Tensor], lr: float):
    """Plain gradient descent; clears grads afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"param {i} has no gradient; run backward first")
        p.data -= lr * p.grad
        p.grad = None
