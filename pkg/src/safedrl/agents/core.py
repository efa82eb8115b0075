"""Shared agent plumbing: hyperparameters, transitions, replay buffer, CVaR."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from ..env import TerminalCause
from ..errors import ConfigurationError
from ..nn.deepsets import SetBatch, StateFeatures


@dataclass
class TrainingConfig:
    gamma: float = 0.99
    learning_rate: float = 1e-4
    buffer_size: int = 100_000
    batch_size: int = 64
    target_sync: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.2
    n_tau: int = 8
    n_tau_target: int = 8
    k_act: int = 32
    kappa: float = 1.0
    total_steps: int = 300_000
    lam: float = 1.0
    train_freq: int = 1
    learning_starts: int = 1000
    width: int = 64
    embed_order: int = 64
    sigma_d: float = 1.0
    sigma_v: float = 2.0
    jerk_limit: float = 5.0
    checkpoint_every: int = 50_000

    def validate(self) -> "TrainingConfig":
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in [0, 1)")
        if min(self.n_tau, self.n_tau_target, self.k_act, self.batch_size, self.buffer_size,
               self.target_sync, self.train_freq, self.width, self.embed_order) < 1:
            raise ConfigurationError("counts and sizes must be >= 1")
        if self.total_steps < 0 or self.learning_starts < 0:
            raise ConfigurationError("step counts must be non-negative")
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ConfigurationError("require 0 <= eps_end <= eps_start <= 1")
        if self.learning_rate <= 0.0 or self.kappa < 0.0 or self.lam < 0.0:
            raise ConfigurationError("learning_rate must be positive, kappa and lam non-negative")
        return self

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def epsilon(self, step: int) -> float:
        horizon = self.eps_fraction * self.total_steps
        if horizon <= 0.0:
            return self.eps_end
        if step >= horizon:
            return self.eps_end
        frac = step / horizon
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class Transition:
    state: StateFeatures
    action: int
    reward: float
    next_state: StateFeatures
    terminal: bool
    cause: TerminalCause = TerminalCause.NONE


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigurationError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.items: list = []
        self.pos = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, transition: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(transition)
        else:
            self.items[self.pos] = transition
        self.pos = (self.pos + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> list:
        idx = rng.integers(len(self.items), size=batch_size)
        return [self.items[i] for i in idx]


@dataclass
class Batch:
    states: SetBatch
    actions: np.ndarray
    rewards: np.ndarray
    next_states: SetBatch
    terminals: np.ndarray

    @classmethod
    def from_transitions(cls, items) -> "Batch":
        return cls(SetBatch.from_features(t.state for t in items),
                   np.array([t.action for t in items], dtype=int),
                   np.array([t.reward for t in items], dtype=float),
                   SetBatch.from_features(t.next_state for t in items),
                   np.array([t.terminal for t in items], dtype=float))


def cvar_value(quantiles, alpha: float) -> np.ndarray:
    """Mean of the lowest ceil(alpha * K) of K quantile samples, per action.

    ``quantiles`` is (A, K) (one row per action) or a 1-D array for one action.
    Sums are exact (``math.fsum``) so the result does not depend on sample order.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    q = np.sort(np.atleast_2d(np.asarray(quantiles, dtype=float)), axis=1)
    k = q.shape[1]
    n = min(max(int(math.ceil(alpha * k - 1e-9)), 1), k)
    out = np.array([row[0] if row[0] == row[n - 1] else math.fsum(row[:n]) / n for row in q])
    return out if np.ndim(quantiles) > 1 else out[0]


def greedy(values: np.ndarray) -> int:
    """Argmax with the smallest index winning ties."""
    return int(np.argmax(values))
