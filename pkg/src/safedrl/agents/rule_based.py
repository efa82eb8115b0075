from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ..safety import EMERGENCY_JERK_LIMIT


class RuleBasedPolicy(BaseEstimator):
    """Fastest safe action; the shield's minimal-jerk emergency command when none is safe."""

    def __init__(self, emergency_jerk_limit: float = EMERGENCY_JERK_LIMIT):
        self.emergency_jerk_limit = emergency_jerk_limit

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def propose(self, state, verdict, rng=None) -> float:
        if verdict.safe_set:
            return max(verdict.safe_set)
        return float(verdict.emergency_jerk)

    def predict(self, verdicts) -> np.ndarray:
        return np.array([self.propose(None, v) for v in verdicts])


class RandomSafePolicy(BaseEstimator):
    """Uniformly random action from the safe set (an untrained reference policy)."""

    def __init__(self, random_state: int = 0):
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def propose(self, state, verdict, rng) -> float:
        if verdict.safe_set:
            return verdict.safe_set[int(rng.integers(len(verdict.safe_set)))]
        return float(verdict.emergency_jerk)
