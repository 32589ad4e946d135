"""Adam with bias correction plus the polynomial learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter


@dataclass
class PolySchedule:
    """lr(step) = lr0 * (1 - step / total_steps) ** power."""

    lr0: float = 1e-3
    total_steps: int = 1
    power: float = 1.0

    def lr(self, step: int) -> float:
        if step < 0 or step > self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        return self.lr0 * (1.0 - step / self.total_steps) ** self.power


class Adam:
    """Standard Adam; moments are float32 like the parameters they track."""

    def __init__(self, params: list[Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
