"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(ValueError):
    pass


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("Adam epsilon must be positive")
        if self.first_moment.shape != self.second_moment.shape:
            raise ValueError("Adam moments must share a shape")

    @classmethod
    def like(cls, param, **kw):
        shape = np.shape(getattr(param, "data", param))
        return cls(np.zeros(shape), np.zeros(shape), **kw)


def adam_step(param, grad, state, lr):
    """Apply one Adam update to ``param.data`` in place.

    Returns ``(param, state)``.  A non-finite gradient raises before anything
    is modified.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.data.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter shape {param.data.shape}")
    if state.first_moment.shape != param.data.shape:
        raise ValueError(
            f"optimizer state shape {state.first_moment.shape} does not match parameter shape {param.data.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite gradient for parameter {getattr(param, 'name', None)!r}")

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    state.first_moment, state.second_moment, state.step_count = m, v, t
    return param, state


@dataclass
class Adam:
    """A parameter group sharing one learning rate."""

    params: list
    lr: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    states: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not self.states:
            self.states = [
                AdamState.like(p, beta1=self.betas[0], beta2=self.betas[1], epsilon=self.eps)
                for p in self.params
            ]

    def step(self):
        for p, s in zip(self.params, self.states):
            if p.grad is not None:
                adam_step(p, p.grad, s, self.lr)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
