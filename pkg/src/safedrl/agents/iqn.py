from __future__ import annotations

import numpy as np

from ..nn.deepsets import SetBatch
from ..nn.quantile import quantile_huber_loss
from ..safety import ACTIONS
from .base import DeepAgent
from .core import Batch, TrainingConfig


class IQNAgent(DeepAgent):
    """Implicit quantile network acting on CVaR_alpha of the learned return distribution.

    ``alpha`` is the risk level used at execution time; during training alpha is
    drawn from U(0, 1] at the start of every episode.
    """

    kind = "iqn"
    _meta_params = ("alpha",)

    def __init__(self, config: TrainingConfig | None = None, random_state: int = 0,
                 alpha: float = 1.0):
        super().__init__(config=config, random_state=random_state)
        self.alpha = alpha

    def _alpha(self, alpha):
        a = self.alpha if alpha is None else float(alpha)
        if not 0.0 < a <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        return a

    def _episode_alpha(self, rng) -> float:
        return float(1.0 - rng.random())

    def _extra_meta(self) -> dict:
        return {"alpha": self.alpha}

    def quantile_values(self, feat, taus: np.ndarray) -> np.ndarray:
        """(K, A) quantile values of one featurized state at levels ``taus``."""
        return self.network_.quantiles(SetBatch.from_features([feat]), taus[None, :])[0]

    def _values(self, feat, rng, alpha: float = 1.0) -> np.ndarray:
        taus = alpha * (1.0 - rng.random(self.config_.k_act))
        return self.quantile_values(feat, taus).mean(axis=0)

    def target_quantiles(self, batch: Batch, rng) -> np.ndarray:
        """(B, N') distributional Bellman targets with a risk-neutral greedy next action."""
        cfg = self.config_
        B = len(batch.rewards)
        taus_next = rng.random((B, cfg.n_tau_target))
        z_next = self.target_network_.quantiles(batch.next_states, taus_next)
        a_star = z_next.mean(axis=1).argmax(axis=1)
        z_star = z_next[np.arange(B), :, a_star]
        return batch.rewards[:, None] + cfg.gamma * (1.0 - batch.terminals)[:, None] * z_star

    def _learn(self, items, rng) -> float:
        cfg = self.config_
        batch = Batch.from_transitions(items)
        target = self.target_quantiles(batch, rng)
        B = len(batch.rewards)
        taus = rng.random((B, cfg.n_tau))

        def grad_fn():
            z = self.network_.quantiles(batch.states, taus)
            pred = z[np.arange(B), :, batch.actions]
            loss, g_pred = quantile_huber_loss(pred, taus, target, cfg.kappa)
            g = np.zeros_like(z)
            g[np.arange(B), :, batch.actions] = g_pred
            self.network_.backward(g)
            return loss

        return self._apply(grad_fn)
