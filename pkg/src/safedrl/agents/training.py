"""Off-policy training loop shared by the DQN and IQN agents."""
from __future__ import annotations

import csv
import os
from dataclasses import replace

import numpy as np

from ..env import IntersectionEnv, TerminalCause
from ..nn.checkpoint import save_checkpoint
from ..nn.deepsets import featurize
from ..safety import ACTIONS, ShieldMode
from ..scenario import DEFAULT_RANGES, ScenarioSpec, sample_scenario
from .core import ReplayBuffer, Transition

LOG_FIELDS = ("step", "episode", "return", "length", "interference", "alpha", "epsilon", "loss")


class ScenarioSource:
    """Yields training environments: fresh random scenarios or a fixed list (cycled)."""

    def __init__(self, scenarios=None, sigma_d: float = 1.0, sigma_v: float = 2.0,
                 jerk_limit: float = 5.0, lam: float = 1.0):
        self.scenarios = scenarios
        self.ranges = replace(DEFAULT_RANGES, sigma_d=(float(sigma_d),), sigma_v=(float(sigma_v),))
        self.jerk_limit = jerk_limit
        self.lam = lam
        self._i = 0

    def __call__(self, rng: np.random.Generator) -> IntersectionEnv:
        if self.scenarios is None:
            spec = sample_scenario(rng, self.ranges)
        elif callable(self.scenarios):
            spec = self.scenarios(rng)
        else:
            spec = self.scenarios[self._i % len(self.scenarios)]
            self._i += 1
        seed = int(rng.integers(0, 2**63 - 1))
        return IntersectionEnv(spec, seed, self.jerk_limit, ShieldMode.TRAINING, lam=self.lam)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def train_loop(agent, source, rng: np.random.Generator, out_dir=None, keep_buffer: bool = False):
    """Run ``agent.config.total_steps`` environment steps; returns the per-episode log."""
    cfg = agent.config_
    buffer = ReplayBuffer(cfg.buffer_size)
    log = []
    writer = fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "training_log.csv"), "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
    step = 0
    episode = 0
    try:
        while step < cfg.total_steps:
            env = source(rng)
            alpha = agent._episode_alpha(rng)
            feat = featurize(env.state)
            ep_return, length, interference, losses = 0.0, 0, False, []
            eps = cfg.epsilon(step)
            while not env.done and step < cfg.total_steps:
                eps = cfg.epsilon(step)
                a = agent._select(feat, eps, rng, alpha)
                res = env.step(ACTIONS[a])
                next_feat = feat if res.cause is TerminalCause.INTERFERENCE else featurize(res.state)
                terminal = res.done and res.cause is not TerminalCause.TIMEOUT
                buffer.add(Transition(feat, a, res.reward, next_feat, terminal, res.cause))
                feat = next_feat
                ep_return += res.reward
                length += 1
                interference |= res.cause is TerminalCause.INTERFERENCE
                step += 1
                if step >= cfg.learning_starts and step % cfg.train_freq == 0 and len(buffer):
                    losses.append(agent._learn(buffer.sample(rng, cfg.batch_size), rng))
                if step % cfg.target_sync == 0:
                    agent._sync_target()
                if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    agent.save(os.path.join(out_dir, f"checkpoint_{step}.npz"))
            row = {"step": step, "episode": episode, "return": ep_return, "length": length,
                   "interference": int(interference), "alpha": alpha, "epsilon": eps,
                   "loss": float(np.mean(losses)) if losses else float("nan")}
            log.append(row)
            if writer is not None:
                writer.writerow([_fmt(row[k]) for k in LOG_FIELDS])
            episode += 1
    finally:
        if fh is not None:
            fh.close()
    return (log, buffer) if keep_buffer else (log, None)
