"""Adam ascent with a linear warm-up followed by cosine decay."""

from __future__ import annotations

import math

import numpy as np


def lr_schedule(step: int, total: int, init: float, peak: float, floor: float, warmup_frac: float) -> float:
    """Step size for ``step`` in ``0..total-1``."""
    if total <= 1:
        return peak
    n_warm = max(1, int(round(warmup_frac * total)))
    if step < n_warm:
        return init + (peak - init) * (step + 1) / n_warm
    rest = max(1, total - n_warm)
    frac = min(1.0, (step - n_warm) / rest)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Bias-corrected Adam for gradient *ascent* on an array parameter."""

    def __init__(self, shape, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1**self.t)
        vh = self.v / (1 - self.b2**self.t)
        return x + lr * mh / (np.sqrt(vh) + self.eps)
