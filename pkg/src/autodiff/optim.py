"""
Adam with bias-corrected moments.

`adam_step` is the pure update rule over named arrays; `Adam` binds it to
a module's parameters and their `.grad` buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from src.autodiff.tensor import Tensor
from src.errors import ConfigError, NumericalError, ShapeError


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def hyperparameters(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step": self.step,
        }


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> OptimizerState:
    """Apply one Adam update in place to `params`; returns the advanced state."""
    if state.learning_rate < 0:
        raise ConfigError(f"learning rate must be >= 0, got {state.learning_rate}")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise NumericalError(
                f"non-finite gradient for parameter {name!r}: {bad} of {grad.size} entries "
                f"(step {state.step + 1})"
            )
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, expected {params[name].shape}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


class Adam:
    def __init__(self, params: Mapping[str, Tensor], learning_rate: float, state: Optional[OptimizerState] = None):
        self.params = dict(params)
        self.state = state or OptimizerState(learning_rate=learning_rate)

    def step(self) -> None:
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
