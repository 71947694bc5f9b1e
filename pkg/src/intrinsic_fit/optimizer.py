"""
Adam over named numpy parameter arrays, with an exponential learning-rate schedule.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np


@dataclass
class ExponentialSchedule:
    """lr(t) = lr_start * (lr_end / lr_start) ** (t / total)"""

    lr_start: float = 5e-3
    lr_end: float = 5e-4
    total: int = 10000

    def __call__(self, step: int) -> float:
        frac = min(step / max(self.total, 1), 1.0)
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


class Adam:
    """Adam with bias-corrected moments; parameters are updated in place"""

    def __init__(self, lr: float = 5e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        for name in sorted(params):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)
            params[name] -= (lr / bc1) * self.m[name] / (np.sqrt(self.v[name] / bc2) + self.epsilon)
