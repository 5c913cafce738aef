from __future__ import annotations

import math
from typing import Mapping

import numpy as np


def scaled_lr(batch_size: int, base: float = 5e-4, multiplier: float = 1.0) -> float:
    """Linear scaling rule: base * batch / 256, times an optional multiplier."""
    return base * batch_size / 256.0 * multiplier


def cosine(step: int, total: int, peak: float, floor: float = 0.0) -> float:
    if total <= 1:
        return peak
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * step / (total - 1)))


class Adam:
    """Adam with first-moment decay 0.9; updates the parameter dict in place."""

    def __init__(self, params: Mapping[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
        self.t += 1
        c1, c2 = 1 - self.beta1 ** self.t, 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.weight_decay and params[k].ndim > 1:
                update = update + self.weight_decay * params[k]
            params[k] = params[k] - lr * update
