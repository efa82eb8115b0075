from .core import Batch, ReplayBuffer, TrainingConfig, Transition, cvar_value, greedy
from .dqn import DQNAgent
from .iqn import IQNAgent
from .rule_based import RandomSafePolicy, RuleBasedPolicy
from .training import ScenarioSource, train_loop

__all__ = ["Batch", "DQNAgent", "IQNAgent", "RandomSafePolicy", "ReplayBuffer",
           "RuleBasedPolicy", "ScenarioSource", "TrainingConfig", "Transition", "cvar_value",
           "greedy", "train_loop"]
