"""AdamW with decoupled weight decay and a polynomial learning-rate schedule."""

from __future__ import annotations

import numpy as np


class AdamW:
    def __init__(self, params, lr=6e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            # biases, norm affines and scalars are not decayed
            if self.weight_decay and p.ndim >= 2:
                p.data *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class PolynomialLR:
    """``lr(step) = base_lr * (1 - step / total_steps) ** power``."""

    def __init__(self, optimizer, total_steps, power=1.0):
        if total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        self.optimizer = optimizer
        self.base_lr = optimizer.lr
        self.total_steps = total_steps
        self.power = power
        self.last_step = 0

    def lr_at(self, step):
        frac = min(step, self.total_steps) / self.total_steps
        return self.base_lr * (1.0 - frac) ** self.power

    def step(self):
        self.last_step += 1
        self.optimizer.lr = self.lr_at(self.last_step)
        return self.optimizer.lr
