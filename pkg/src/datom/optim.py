"""Adam with bias correction and L2 weight decay."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Parameter


class Adam:
    """Adam over a fixed list of parameters.

    Weight decay is the classic L2 form: ``grad + weight_decay * value`` is
    fed into the moment estimates. Defaults follow the decomposer training
    recipe (``lr=1e-3``, ``betas=(0.5, 0.999)``, ``weight_decay=1e-5``).
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.5, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.lr:
                p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
