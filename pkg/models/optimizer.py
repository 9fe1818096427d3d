from typing import Dict

import numpy as np

from core.exceptions import TrainingError
from schemas.schema import OptimizerConfig


class Adam:
    """Adam with bias correction over a dict of named numpy parameters.

    ``step`` updates the parameter arrays in place.
    """

    def __init__(self, lr: float = 0.005, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, config: OptimizerConfig) -> "Adam":
        return cls(config.learning_rate, config.beta1, config.beta2, config.eps)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        for name, g in grads.items():
            if name not in params or params[name].shape != g.shape:
                raise TrainingError(f"gradient for {name} does not match its parameter")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name}", {"parameter": name, "step": self.t + 1})

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[name] / bc2) + self.eps
            params[name] -= step_size * self.m[name] / denom
        return params
