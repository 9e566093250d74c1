"""Adam with coupled L2 weight decay, and the step learning-rate schedule."""

from __future__ import annotations

import numpy as np


def adam_update(value, grad, m, v, step, lr, beta1, beta2, eps):
    """One bias-corrected Adam update; mutates value/m/v in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Classic Adam; weight decay is added to the gradient before the moment
    updates (coupled L2)."""

    def __init__(self, params, lr=1e-5, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=True)
            if self.weight_decay:
                g += np.asarray(self.weight_decay, dtype=p.data.dtype) * p.data
            adam_update(
                p.data, g, m, v, self.step_count, self.lr, self.beta1, self.beta2, self.eps
            )

    def hyperparameters(self) -> dict:
        return {
            "optimizer": "adam",
            "learning_rate": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.eps,
        }


def step_lr(base_lr: float, epoch_index: int, step_size: int, factor: float) -> float:
    """Learning rate for 0-based ``epoch_index``: base * factor**(e // step)."""
    return base_lr * factor ** (epoch_index // step_size)
