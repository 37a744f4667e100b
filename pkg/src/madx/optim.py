"""Adam with bias correction; frozen parameters are never touched."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def adam_step(state: OptimizerState, params: Iterable[Parameter]) -> OptimizerState:
    """Apply one Adam update in place to every non-frozen parameter, then clear grads.

    A parameter without a gradient is treated as having a zero gradient, so
    its moments still decay. Raises ``FloatingPointError`` naming the first
    parameter whose gradient is not finite; no parameter is modified in that case.
    """
    params = [p for p in params if not p.frozen]
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.first_moment.get(p.name)
        if m is None:
            m = state.first_moment[p.name] = np.zeros_like(p.data)
            state.second_moment[p.name] = np.zeros_like(p.data)
        v = state.second_moment[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data -= update.astype(p.dtype, copy=False)
        p.grad = None
    return state


class Adam:
    """Thin stateful wrapper pairing an :class:`OptimizerState` with a parameter list."""

    def __init__(self, params: Iterable[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr, betas[0], betas[1], eps)

    def step(self) -> None:
        adam_step(self.state, self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
