from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias correction; updates the registered arrays in place."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"adam.t": np.array(self.t)}
        out.update({f"adam.m.{k}": v for k, v in self.m.items()})
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["adam.t"])
        for k in self.params:
            self.m[k][...] = state[f"adam.m.{k}"]
            self.v[k][...] = state[f"adam.v.{k}"]
