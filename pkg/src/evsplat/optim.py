"""Adaptive-moment gradient descent and learning-rate schedules."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamOptimizer", "ExponentialDecay"]


class AdamOptimizer:
    """Per-parameter moment estimation with bias correction."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class ExponentialDecay:
    """lr(step) sliding geometrically from start to end over total steps."""

    def __init__(self, lr_start: float, lr_end: float, total_steps: int):
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.total_steps = max(int(total_steps), 1)

    def lr(self, step: int) -> float:
        frac = min(max(step / self.total_steps, 0.0), 1.0)
        return self.lr_start * (self.lr_end / self.lr_start) ** frac
