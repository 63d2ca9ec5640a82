"""Adam optimizer and the linear warmup / linear decay schedule."""

from __future__ import annotations

import numpy as np

from .layers import Param


class Adam:
    """Standard Adam with bias correction over an explicit parameter list.

    Parameters excluded from ``params`` (e.g. frozen feature stacks) are
    never touched.  ``step`` applies the update using ``lr_scale`` times the
    base learning rate and clears the gradients it consumed.
    """

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        lr = self.lr * lr_scale
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def warmup_linear_decay(step: int, total_steps: int, warmup_steps: int) -> float:
    """LR multiplier: ramp 0 -> 1 over warmup, then decay linearly to 0."""
    if total_steps <= 0:
        return 1.0
    warmup_steps = max(0, min(warmup_steps, total_steps - 1))
    if warmup_steps > 0 and step < warmup_steps:
        return (step + 1) / warmup_steps
    denom = max(1, total_steps - warmup_steps)
    return max(0.0, (total_steps - step) / denom)
