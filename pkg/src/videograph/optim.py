"""SGD with momentum and decoupled-from-nothing classic weight decay.

Update rule, per parameter:
    v <- momentum * v + (grad + weight_decay * theta)
    theta <- theta - lr * v
Gradients are zeroed after the step.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class SgdMomentum:
    def __init__(self, params: dict[str, Tensor], learning_rate: float = 0.1,
                 momentum: float = 0.9, weight_decay: float = 1e-5):
        if learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {learning_rate}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {weight_decay}")
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {name!r} has no gradient; run backward first")
            v = self.momentum * self.velocity[name] + (p.grad + self.weight_decay * p.data)
            self.velocity[name] = v
            p.data -= self.learning_rate * v
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
