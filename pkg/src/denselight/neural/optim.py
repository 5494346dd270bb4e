"""Adam with an externally supplied (linearly decayed) learning rate."""
from __future__ import annotations

import numpy as np

from .autograd import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


def linear_decay(lr0: float, step: int, total_steps: int) -> float:
    """``lr0 * (1 - step / total_steps)``, clamped at 0."""
    if total_steps <= 0:
        return lr0
    return lr0 * max(0.0, 1.0 - step / total_steps)


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float, grads: dict[str, np.ndarray] | None = None) -> None:
        """One descent step. ``grads`` defaults to each parameter's ``.grad``."""
        if grads is None:
            grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in self.params.items()}
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {k!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            if lr == 0.0:
                continue
            p.data = p.data - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for k in self.params:
            out[f"m:{k}"] = self.m[k].copy()
            out[f"v:{k}"] = self.v[k].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = np.array(state[f"m:{k}"])
            self.v[k] = np.array(state[f"v:{k}"])
