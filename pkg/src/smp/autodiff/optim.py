from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import MissingGradient
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState) -> AdamState:
    """One bias-corrected Adam update in place; returns ``state``."""
    missing = [p.name or i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise MissingGradient(f"no gradient for {missing}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.value) for p in params]
        state.second_moment = [np.zeros_like(p.value) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_hat = state.epsilon * np.sqrt(1.0 - b2 ** t)
    for p, m, v in zip(params, state.first_moment, state.second_moment, strict=True):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - step_size * m / (np.sqrt(v) + eps_hat)
    return state


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 4e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
