"""Value networks: Deep-Sets encoder followed by a DQN head or an implicit-quantile head."""
from __future__ import annotations

import copy

import numpy as np

from ..errors import ConfigurationError
from .deepsets import EGO_WIDTH, ELEMENT_WIDTH, DeepSetsEncoder, SetBatch
from .layers import MLP
from .quantile import ImplicitQuantileHead


class ValueNetwork:
    def __init__(self, kind: str = "dqn", width: int = 64, n_actions: int = 3,
                 embed_order: int = 64, seed: int = 0, element_width: int = ELEMENT_WIDTH,
                 ego_width: int = EGO_WIDTH):
        if kind not in ("dqn", "iqn"):
            raise ConfigurationError(f"unknown network kind '{kind}'")
        rng = np.random.default_rng(seed)
        self.kind = kind
        self.width = width
        self.n_actions = n_actions
        self.embed_order = embed_order
        self.encoder = DeepSetsEncoder(width, element_width, ego_width, rng)
        if kind == "dqn":
            self.head = MLP([width, width, n_actions], rng, "q_head")
        else:
            self.head = ImplicitQuantileHead(width, n_actions, embed_order, rng)
        self._flatten()

    def _layers(self):
        nets = list(self.encoder.nets)
        if self.kind == "dqn":
            nets.append(self.head)
        else:
            nets += [self.head.embedding, self.head.head]
        for net in nets:
            yield from (net.layers if hasattr(net, "layers") else [net.linear])

    def _flatten(self) -> None:
        """Re-home all weights and gradients as views into two contiguous vectors."""
        layers = list(self._layers())
        total = sum(layer.W.size + layer.b.size for layer in layers)
        self.flat_params = np.empty(total)
        self.flat_grads = np.zeros(total)
        pos = 0
        for layer in layers:
            for name in ("W", "b"):
                arr = getattr(layer, name)
                n = arr.size
                view = self.flat_params[pos:pos + n].reshape(arr.shape)
                view[...] = arr
                setattr(layer, name, view)
                setattr(layer, "d" + name, self.flat_grads[pos:pos + n].reshape(arr.shape))
                pos += n

    def config(self) -> dict:
        return {"kind": self.kind, "width": self.width, "n_actions": self.n_actions,
                "embed_order": self.embed_order, "element_width": self.encoder.element_width,
                "ego_width": self.encoder.ego_width}

    def q_values(self, batch: SetBatch) -> np.ndarray:
        """(B, A) action values of the DQN head."""
        return self.head.forward(self.encoder.forward(batch))

    def quantiles(self, batch: SetBatch, taus: np.ndarray) -> np.ndarray:
        """(B, N, A) quantile values of the IQN head at levels taus (B, N)."""
        return self.head.forward(self.encoder.forward(batch), taus)

    def backward(self, g: np.ndarray) -> None:
        self.encoder.backward(self.head.backward(g))

    def params(self) -> dict:
        out = self.encoder.params()
        out.update(self.head.params())
        return out

    def grads(self) -> dict:
        out = self.encoder.grads()
        out.update(self.head.grads())
        return out

    def zero_grad(self) -> None:
        self.flat_grads[...] = 0.0

    def load_params(self, params: dict) -> None:
        own = self.params()
        if set(own) != set(params):
            raise ConfigurationError("parameter names do not match the network layout")
        for k, v in params.items():
            if own[k].shape != np.shape(v):
                raise ConfigurationError(f"shape mismatch for {k}")
            own[k][...] = v

    def clone(self) -> "ValueNetwork":
        twin = copy.deepcopy(self)
        twin._flatten()
        return twin
