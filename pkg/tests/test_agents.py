import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import chisquare

from safedrl.agents import (DQNAgent, IQNAgent, RandomSafePolicy, RuleBasedPolicy, ScenarioSource,
                            TrainingConfig, Transition, cvar_value, greedy)
from safedrl.agents.core import Batch
from safedrl.env import EpisodeStatus, TerminalCause, reward
from safedrl.errors import ConfigurationError
from safedrl.nn.deepsets import EGO_WIDTH, ELEMENT_WIDTH, StateFeatures
from safedrl.safety import ACTIONS, SafetyVerdict
from safedrl.scenario import sample_scenario

TINY = dict(width=16, embed_order=8, buffer_size=5000, learning_starts=64, target_sync=200,
            checkpoint_every=0)


def tiny(**kw):
    return TrainingConfig(**{**TINY, **kw})


def feat(rng, n=2, m=1):
    return StateFeatures(rng.normal(size=EGO_WIDTH), rng.normal(size=(n, ELEMENT_WIDTH)),
                         rng.normal(size=(m, ELEMENT_WIDTH)))


def initialized(cls, **kw):
    agent = cls(config=tiny(**kw), random_state=0)
    agent._init_network()
    return agent


# --- reward --------------------------------------------------------------------

def test_reward_examples():
    assert reward(True, EpisodeStatus.GOAL_REACHED) == 1.0
    assert reward(False, EpisodeStatus.RUNNING) == -1.0
    assert reward(True, EpisodeStatus.RUNNING) == 0.0
    assert reward(True, EpisodeStatus.TIMEOUT) == 0.0


# --- cvar ------------------------------------------------------------------------

def test_cvar_examples():
    assert cvar_value([2.0, -1.0, 0.0, 1.0, -2.0], 0.4) == -1.5
    assert cvar_value([0.3] * 7, 0.05) == 0.3
    q = np.array([0.1, 0.7, 0.2, 0.35])
    assert cvar_value(q, 1.0) == math.fsum(q) / 4
    with pytest.raises(ValueError):
        cvar_value(q, 0.0)
    with pytest.raises(ValueError):
        cvar_value(q, 1.2)


def test_cvar_monotone_and_mean():
    rng = np.random.default_rng(0)
    grid = np.linspace(0.01, 1.0, 40)
    for _ in range(1000):
        q = rng.normal(size=(3, int(rng.integers(1, 40))))
        vals = np.array([cvar_value(q, a) for a in grid])
        assert np.all(np.diff(vals, axis=0) >= 0.0)
        assert np.array_equal(cvar_value(q, 1.0), [math.fsum(r) / q.shape[1] for r in q])


def test_greedy_smallest_index_tie_break():
    assert greedy(np.array([1.0, 3.0, 3.0])) == 1
    assert greedy(np.zeros(3)) == 0


# --- rule-based and random-safe ---------------------------------------------------

def verdict(safe, emergency=None):
    return SafetyVerdict({a: a in safe for a in ACTIONS}, tuple(safe), emergency)


def test_rule_based_picks_fastest_safe():
    rule = RuleBasedPolicy().fit()
    assert rule.propose(None, verdict(ACTIONS)) == 1.5
    assert rule.propose(None, verdict((-1.5,))) == -1.5
    assert rule.propose(None, verdict((), -2.3)) == -2.3
    assert list(rule.predict([verdict((-1.5, 0.0)), verdict((), 4.0)])) == [0.0, 4.0]


def test_random_safe_stays_in_safe_set():
    pol = RandomSafePolicy().fit()
    rng = np.random.default_rng(1)
    picks = {pol.propose(None, verdict((-1.5, 0.0)), rng) for _ in range(100)}
    assert picks == {-1.5, 0.0}


# --- DQN ----------------------------------------------------------------------------

def test_full_exploration_is_uniform():
    agent = initialized(DQNAgent)
    rng = np.random.default_rng(2)
    f = feat(rng)
    counts = np.bincount([agent._select(f, 1.0, rng) for _ in range(10_000)], minlength=3)
    assert chisquare(counts).pvalue > 0.01


def test_zero_epsilon_is_deterministic():
    agent = initialized(IQNAgent)
    f = feat(np.random.default_rng(3))
    picks = {agent._select(f, 0.0, np.random.default_rng(9), 0.5) for _ in range(5)}
    assert len(picks) == 1


def test_terminal_td_target_is_reward():
    agent = initialized(DQNAgent, gamma=0.9)
    rng = np.random.default_rng(4)
    items = [Transition(feat(rng), 1, r, feat(rng), True) for r in (1.0, -1.0, 0.0)]
    assert np.array_equal(agent.td_targets(Batch.from_transitions(items)), [1.0, -1.0, 0.0])
    iqn = initialized(IQNAgent, gamma=0.9)
    z = iqn.target_quantiles(Batch.from_transitions(items), rng)
    assert np.array_equal(z, np.repeat([[1.0], [-1.0], [0.0]], iqn.config_.n_tau_target, axis=1))


def test_gamma_zero_regression_to_reward():
    agent = initialized(DQNAgent, gamma=0.0, learning_rate=1e-3, batch_size=8)
    rng = np.random.default_rng(5)
    s, s2 = feat(rng), feat(rng)
    items = [Transition(s, 2, 0.7, s2, False)] * 8
    for i in range(3000):
        if i == 2000:
            agent.optimizer_.lr = 1e-5
        agent._learn(items, rng)
    assert abs(agent._values(s, rng)[2] - 0.7) < 1e-3


# --- IQN ------------------------------------------------------------------------------

def test_quantile_recovery_of_three_atoms():
    agent = initialized(IQNAgent, kappa=0.0, learning_rate=3e-3, n_tau=16)
    rng = np.random.default_rng(6)
    s = feat(rng)
    for i in range(1500):
        if i == 1000:
            agent.optimizer_.lr = 3e-4
        rewards = rng.choice([-1.0, 0.0, 1.0], size=64)
        agent._learn([Transition(s, 0, r, s, True) for r in rewards], rng)
    z = agent.quantile_values(s, np.array([1 / 6, 3 / 6, 5 / 6]))[:, 0]
    assert np.allclose(z, [-1.0, 0.0, 1.0], atol=0.1)


def synthetic_head(agent, fn):
    agent.quantile_values = lambda f, taus: fn(np.asarray(taus))


def test_iqn_cvar_on_synthetic_head():
    agent = initialized(IQNAgent, k_act=2000)
    # action 0 is worse in the lower tail, better on average
    synthetic_head(agent, lambda t: np.stack([4 * t - 1.5, np.zeros_like(t), t - 5], axis=1))
    rng = np.random.default_rng(7)
    f = None
    grid = (np.arange(1000) + 0.5) / 1000
    for alpha, expect in ((1.0, 0), (0.2, 1)):
        oracle = cvar_value(np.stack([4 * grid - 1.5, 0 * grid, grid - 5]), alpha)
        assert greedy(oracle) == expect
        assert agent._select(f, 0.0, rng, alpha) == expect


def test_iqn_argmax_shift_invariance_and_single_tau():
    agent = initialized(IQNAgent, k_act=1)
    rng = np.random.default_rng(8)
    f = feat(rng)
    base = agent._select(f, 0.0, np.random.default_rng(1), 0.7)
    real_qv = agent.quantile_values
    synthetic_head(agent, lambda t: real_qv(f, t) + 100.0)
    assert agent._select(f, 0.0, np.random.default_rng(1), 0.7) == base
    tau = 0.7 * (1.0 - np.random.default_rng(1).random(1))
    assert base == greedy(real_qv(f, tau)[0])


def test_iqn_reduces_to_dqn_for_constant_quantiles():
    rng = np.random.default_rng(9)
    dqn = initialized(DQNAgent)
    iqn = initialized(IQNAgent)
    enc = {k: v for k, v in dqn.network_.encoder.params().items()}
    for k, v in iqn.network_.encoder.params().items():
        v[...] = enc[k]
    for (_, src), (_, dst) in zip(sorted(dqn.network_.head.params().items()),
                                  sorted(iqn.network_.head.head.params().items())):
        dst[...] = src
    emb = iqn.network_.head.embedding.linear
    emb.W[...] = 0.0
    emb.b[...] = 1.0
    for _ in range(20):
        f = feat(rng, int(rng.integers(0, 4)), int(rng.integers(0, 3)))
        assert np.allclose(iqn._values(f, rng, 1.0), dqn._values(f, rng), atol=1e-12)
        assert iqn._select(f, 0.0, rng, 1.0) == dqn._select(f, 0.0, rng)


def test_iqn_alpha_validation():
    agent = initialized(IQNAgent)
    with pytest.raises(ValueError):
        agent._alpha(0.0)


# --- training loop ---------------------------------------------------------------------------

def test_zero_step_budget_keeps_initial_parameters():
    agent = DQNAgent(config=tiny(total_steps=0), random_state=3).fit()
    fresh = initialized(DQNAgent)
    fresh.random_state = 3
    fresh._init_network()
    assert np.array_equal(agent.network_.flat_params, fresh.network_.flat_params)
    assert agent.training_log_ == []


class AlwaysUnsafe(ScenarioSource):
    def __call__(self, rng):
        env = super().__call__(rng)
        env.verdict = replace(env.verdict, psa={a: False for a in ACTIONS}, safe_set=(),
                              emergency_jerk=-5.0)
        return env


def test_forced_interference_episodes():
    agent = DQNAgent(config=tiny(total_steps=30), random_state=0)
    agent.fit(AlwaysUnsafe(), keep_buffer=True)
    assert len(agent.training_log_) == 30
    assert all(r["length"] == 1 and r["return"] == -1.0 and r["interference"] == 1
               for r in agent.training_log_)
    assert all(t.terminal and t.reward == -1.0 for t in agent.buffer_.items)


def test_buffer_audit_on_short_run(tmp_path):
    agent = IQNAgent(config=tiny(total_steps=400), random_state=1)
    agent.fit(out_dir=str(tmp_path), keep_buffer=True)
    items = agent.buffer_.items
    assert len(items) == 400
    for t in items:
        assert t.action in (0, 1, 2)
        if t.cause is TerminalCause.INTERFERENCE:
            assert t.terminal and t.reward == -1.0
        if t.cause is TerminalCause.TIMEOUT:
            assert not t.terminal
        if t.cause is TerminalCause.GOAL:
            assert t.terminal and t.reward == 1.0
    assert (tmp_path / "training_log.csv").read_text().splitlines()[0] == \
        "step,episode,return,length,interference,alpha,epsilon,loss"
    alphas = [r["alpha"] for r in agent.training_log_]
    assert all(0.0 < a <= 1.0 for a in alphas)


def test_checkpoint_reload_preserves_actions(tmp_path):
    agent = IQNAgent(config=tiny(total_steps=100), random_state=2, alpha=0.4).fit(out_dir=str(tmp_path))
    loaded = IQNAgent.load(tmp_path / "checkpoint_final.npz")
    assert loaded.alpha == 0.4
    assert np.array_equal(loaded.network_.flat_params, agent.network_.flat_params)
    with pytest.raises(ConfigurationError):
        DQNAgent.load(tmp_path / "checkpoint_final.npz")


def test_invalid_config():
    with pytest.raises(ConfigurationError):
        TrainingConfig(gamma=1.0).validate()
    with pytest.raises(ConfigurationError):
        TrainingConfig(n_tau=0).validate()


def test_epsilon_schedule():
    cfg = TrainingConfig(total_steps=1000)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(100) == pytest.approx(0.525)
    assert cfg.epsilon(200) == cfg.epsilon(900) == 0.05


@pytest.mark.slow
def test_smoke_training_reduces_interference():
    improved = 0
    for seed in range(5):
        agent = DQNAgent(config=tiny(total_steps=20_000, learning_rate=1e-3), random_state=seed)
        agent.fit()
        log = agent.training_log_
        steps = np.array([r["step"] for r in log])
        flags = np.array([r["interference"] for r in log])
        first = flags[steps <= 2000].mean()
        last = flags[steps > 18_000].mean()
        improved += last < first
    assert improved >= 4
