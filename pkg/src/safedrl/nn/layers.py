"""Dense layers and MLPs with hand-written reverse-mode gradients (float64)."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError


class Linear:
    """y = x @ W + b, with W of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 name: str = "linear"):
        if n_in < 1 or n_out < 1:
            raise ConfigurationError("layer widths must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        bound = 1.0 / np.sqrt(n_in)
        self.name = name
        self.W = rng.uniform(-bound, bound, size=(n_in, n_out))
        self.b = rng.uniform(-bound, bound, size=n_out)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    @property
    def shape(self) -> tuple:
        return self.W.shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ValueError(f"{self.name}: expected (*, {self.W.shape[0]}) input, got {x.shape}")
        self._x = x
        return x @ self.W + self.b

    def backward(self, g: np.ndarray) -> np.ndarray:
        self.dW += self._x.T @ g
        self.db += g.sum(axis=0)
        return g @ self.W.T

    def params(self) -> dict:
        return {f"{self.name}.W": self.W, f"{self.name}.b": self.b}

    def grads(self) -> dict:
        return {f"{self.name}.W": self.dW, f"{self.name}.b": self.db}


class MLP:
    """Affine layers with ReLU between them; the output is linear unless ``relu_out``."""

    def __init__(self, widths, rng: np.random.Generator | None = None, name: str = "mlp",
                 relu_out: bool = False):
        widths = list(widths)
        if len(widths) < 2:
            raise ConfigurationError("an MLP needs at least input and output widths")
        rng = np.random.default_rng(0) if rng is None else rng
        self.name = name
        self.widths = widths
        self.relu_out = relu_out
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in
                       enumerate(zip(widths[:-1], widths[1:]))]
        self._masks = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._masks = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if i < last or self.relu_out:
                mask = x > 0.0
                x = x * mask
                self._masks.append(mask)
            else:
                self._masks.append(None)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        for layer, mask in zip(reversed(self.layers), reversed(self._masks)):
            if mask is not None:
                g = g * mask
            g = layer.backward(g)
        return g

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def grads(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.grads())
        return out
