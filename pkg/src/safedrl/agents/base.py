from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..errors import ConfigurationError
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.deepsets import SetBatch, featurize
from ..nn.network import ValueNetwork
from ..nn.optim import Adam
from ..perception import StackedState
from ..safety import ACTIONS
from .core import Batch, TrainingConfig
from .training import ScenarioSource, train_loop


class DeepAgent(BaseEstimator):
    """Shared estimator logic for value-based agents over the Deep-Sets encoder."""

    kind = "dqn"
    _meta_params: tuple = ()

    def __init__(self, config: TrainingConfig | None = None, random_state: int = 0):
        self.config = config
        self.random_state = random_state

    # --- construction ---------------------------------------------------------

    def _init_network(self):
        cfg = (self.config or TrainingConfig())
        if not isinstance(cfg, TrainingConfig):
            raise ConfigurationError("config must be a TrainingConfig")
        self.config_ = cfg.validate()
        seed = int(np.random.SeedSequence(self.random_state).generate_state(1)[0])
        self.network_ = ValueNetwork(self.kind, cfg.width, len(ACTIONS), cfg.embed_order, seed)
        self.target_network_ = self.network_.clone()
        self.optimizer_ = Adam({"flat": self.network_.flat_params}, cfg.learning_rate)
        self.n_updates_ = 0

    def fit(self, X=None, y=None, out_dir=None, keep_buffer: bool = False):
        """Train on environments drawn from ``X``.

        ``X`` may be None (fresh random training scenarios), a sequence of
        scenario specs (cycled), a callable ``rng -> spec``, or a ScenarioSource.
        """
        self._init_network()
        cfg = self.config_
        rng = np.random.default_rng(self.random_state)
        source = X if isinstance(X, ScenarioSource) else ScenarioSource(
            X, cfg.sigma_d, cfg.sigma_v, cfg.jerk_limit, cfg.lam)
        self.training_log_, self.buffer_ = train_loop(self, source, rng, out_dir, keep_buffer)
        self.n_steps_ = int(sum(r["length"] for r in self.training_log_))
        if out_dir is not None:
            self.save(f"{out_dir}/checkpoint_final.npz")
        return self

    def _sync_target(self) -> None:
        self.target_network_.flat_params[...] = self.network_.flat_params

    # --- acting ---------------------------------------------------------------

    def _episode_alpha(self, rng) -> float:
        return 1.0

    def _values(self, feat, rng, alpha: float) -> np.ndarray:
        raise NotImplementedError

    def _select(self, feat, eps: float, rng, alpha: float = 1.0) -> int:
        if eps > 0.0 and rng.random() < eps:
            return int(rng.integers(len(ACTIONS)))
        return int(np.argmax(self._values(feat, rng, alpha)))

    def action_values(self, state: StackedState, rng=None, alpha: float | None = None) -> np.ndarray:
        check_is_fitted(self, "network_")
        rng = np.random.default_rng(0) if rng is None else rng
        return self._values(featurize(state), rng, self._alpha(alpha))

    def _alpha(self, alpha):
        return 1.0 if alpha is None else float(alpha)

    def act(self, state: StackedState, eps: float = 0.0, rng=None, alpha: float | None = None) -> int:
        check_is_fitted(self, "network_")
        rng = np.random.default_rng(0) if rng is None else rng
        return self._select(featurize(state), eps, rng, self._alpha(alpha))

    def predict(self, X, rng=None) -> np.ndarray:
        """Greedy action indices for a sequence of stacked states."""
        check_is_fitted(self, "network_")
        rng = np.random.default_rng(0) if rng is None else rng
        return np.array([self.act(s, 0.0, rng) for s in X], dtype=int)

    def propose(self, state: StackedState, verdict, rng) -> float:
        return ACTIONS[self.act(state, 0.0, rng)]

    # --- learning -------------------------------------------------------------

    def _learn(self, items, rng) -> float:
        raise NotImplementedError

    def _apply(self, grad_fn) -> float:
        self.network_.zero_grad()
        loss = grad_fn()
        self.optimizer_.step({"flat": self.network_.flat_grads})
        self.n_updates_ += 1
        return loss

    # --- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        meta = {"network": self.network_.config(), "agent": type(self).__name__,
                "random_state": self.random_state,
                "config": {k: getattr(self.config_, k) for k in TrainingConfig.field_names()}}
        meta.update(self._extra_meta())
        save_checkpoint(path, self.network_.params(), meta)

    def _extra_meta(self) -> dict:
        return {}

    @classmethod
    def load(cls, path):
        params, meta = load_checkpoint(path)
        if meta.get("network", {}).get("kind") != cls.kind:
            raise ConfigurationError(f"{path}: checkpoint is not a {cls.kind} network")
        cfg = TrainingConfig(**meta.get("config", {}))
        agent = cls(config=cfg, random_state=meta.get("random_state", 0))
        for k in cls._meta_params:
            if k in meta:
                setattr(agent, k, meta[k])
        agent._init_network()
        agent.network_.load_params(params)
        agent._sync_target()
        return agent
