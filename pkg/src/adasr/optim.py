"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor


class AdamState:
    """Moment buffers and step counter for one parameter list.

    The buffers stay aligned with the parameter list order; decay rates
    default to beta1=0.9, beta2=0.999.
    """

    def __init__(self, params: list[Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One bias-corrected update; clears grads and bumps the step counter."""
    if params is not state.params and list(params) != state.params:
        raise ContractViolation("adam_step called with a different parameter list")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractViolation(f"parameter {i} has no gradient")
        if state.m[i].shape != p.data.shape:
            raise ContractViolation(f"moment shape drifted for parameter {i}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            p.data.dtype, copy=False
        )
        p.grad = None
