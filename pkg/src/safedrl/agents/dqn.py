from __future__ import annotations

import numpy as np

from ..nn.deepsets import SetBatch
from ..nn.quantile import huber
from .base import DeepAgent
from .core import Batch


class DQNAgent(DeepAgent):
    """Deep Q-learning with a Huber TD loss and a periodically synced target network."""

    kind = "dqn"

    def _values(self, feat, rng, alpha: float = 1.0) -> np.ndarray:
        return self.network_.q_values(SetBatch.from_features([feat]))[0]

    def td_targets(self, batch: Batch) -> np.ndarray:
        cfg = self.config_
        q_next = self.target_network_.q_values(batch.next_states)
        return batch.rewards + cfg.gamma * (1.0 - batch.terminals) * q_next.max(axis=1)

    def _learn(self, items, rng) -> float:
        batch = Batch.from_transitions(items)
        target = self.td_targets(batch)
        kappa = self.config_.kappa

        def grad_fn():
            q = self.network_.q_values(batch.states)
            rows = np.arange(len(target))
            err = q[rows, batch.actions] - target
            loss, dl = huber(err, kappa)
            g = np.zeros_like(q)
            g[rows, batch.actions] = dl / len(target)
            self.network_.backward(g)
            return float(loss.mean())

        return self._apply(grad_fn)
