"""Episode environment: sense -> stack -> propose -> verify -> execute."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .perception import ObservationMatrix, StackedState, sense, stack
from .safety import ACTIONS, EMERGENCY_JERK_LIMIT, SafetyLayer, SafetyVerdict, ShieldMode
from .scenario import ScenarioSpec
from .traffic import DT_DECISION, T_LIMIT, WARMUP_STEPS, EpisodeStatus, episode_status, \
    initial_world, step_world_inplace


class TerminalCause(str, Enum):
    NONE = ""
    GOAL = "goal"
    INTERFERENCE = "interference"
    TIMEOUT = "timeout"
    COLLISION = "collision"


def reward(action_was_safe: bool, status: EpisodeStatus, lam: float = 1.0) -> float:
    """+1 on reaching the goal, -lam for a proposed action outside the safe set, else 0."""
    if not action_was_safe:
        return -float(lam)
    if status is EpisodeStatus.GOAL_REACHED:
        return 1.0
    return 0.0


@dataclass
class StepRecord:
    t: float
    s: float
    v: float
    a: float
    proposed: float
    executed: float
    emergency: bool
    psa_mask: tuple
    stop_margins: dict
    leave_margins: dict
    vehicles: str
    observation: str


@dataclass
class StepResult:
    state: StackedState
    reward: float
    done: bool
    cause: TerminalCause
    executed_jerk: float
    emergency: bool
    status: EpisodeStatus


def _fmt(x: float) -> str:
    return repr(float(x))


class IntersectionEnv:
    """One episode on a fixed scenario; RNG streams for world and sensing are split from ``seed``."""

    def __init__(self, spec: ScenarioSpec, seed: int = 0, jerk_limit: float = EMERGENCY_JERK_LIMIT,
                 mode: ShieldMode = ShieldMode.EVALUATION, t_limit: float = T_LIMIT,
                 lam: float = 1.0, warmup_steps: int = WARMUP_STEPS, record: bool = False):
        self.spec = spec
        self.mode = ShieldMode(mode)
        self.t_limit = t_limit
        self.lam = lam
        self.record = record
        world_seq, sense_seq = np.random.SeedSequence(int(seed) % 2**63).spawn(2)
        self.world = initial_world(spec, np.random.default_rng(world_seq), warmup_steps)
        self.sense_rng = np.random.default_rng(sense_seq)
        self.shield = SafetyLayer(spec, jerk_limit, mode=self.mode)
        self.records: list = []
        self.status = episode_status(self.world, t_limit)
        self.obs = sense(self.world, self.sense_rng)
        self.state = StackedState.initial(self.obs)
        self.verdict = self.shield.verify(self.obs)
        self.done = self.status is not EpisodeStatus.RUNNING

    @property
    def t(self) -> float:
        return self.world.t

    def _snapshot(self, proposed: float, executed: float, emergency: bool, verdict: SafetyVerdict):
        ego = self.world.ego
        vehicles = ";".join(f"{v.vehicle_id}:{v.lane_id}:{v.d:.6g}:{v.v:.6g}"
                            for v in self.world.vehicles)
        obs = self.obs
        obs_txt = ";".join(f"{e.kind.value[0]}{e.lane_id}:{e.d:.6g}:{e.v:.6g}"
                           for e in obs.vehicles + obs.ghosts)
        self.records.append(StepRecord(self.t, ego.s_route, ego.v, ego.a, proposed, executed,
                                       emergency, verdict.mask, dict(verdict.stop_margins),
                                       dict(verdict.leave_margins), vehicles, obs_txt))

    def step(self, jerk: float) -> StepResult:
        """Apply a proposed jerk; unsafe proposals are replaced (evaluation) or terminal (training)."""
        if self.done:
            raise RuntimeError("episode already finished")
        verdict = self.verdict
        safe = any(jerk == a for a in verdict.safe_set)
        if not safe and self.mode is ShieldMode.TRAINING and jerk in ACTIONS:
            if self.record:
                self._snapshot(jerk, jerk, True, verdict)
            self.done = True
            return StepResult(self.state, reward(False, self.status, self.lam), True,
                              TerminalCause.INTERFERENCE, jerk, True, self.status)
        if safe:
            executed, emergency = float(jerk), False
        elif jerk in ACTIONS:
            e = verdict.emergency_jerk
            if e is None:
                # unsafe proposal although another RL action is safe
                e = self.shield.emergency_action(self.obs)
            executed, emergency = float(e), True
        else:
            # a non-RL command (a policy that already applied the emergency maneuver)
            executed, emergency = float(jerk), True
        if self.record:
            self._snapshot(jerk, executed, emergency, verdict)
        step_world_inplace(self.world, executed, DT_DECISION)
        self.status = episode_status(self.world, self.t_limit)
        r = reward(not (emergency and jerk in ACTIONS), self.status, self.lam)
        cause = {EpisodeStatus.GOAL_REACHED: TerminalCause.GOAL,
                 EpisodeStatus.TIMEOUT: TerminalCause.TIMEOUT,
                 EpisodeStatus.COLLISION: TerminalCause.COLLISION}.get(self.status, TerminalCause.NONE)
        self.done = self.status is not EpisodeStatus.RUNNING
        if not self.done:
            self.obs = sense(self.world, self.sense_rng)
            self.state = stack(self.state, self.obs)
            self.verdict = self.shield.verify(self.obs)
        return StepResult(self.state, r, self.done, cause, executed, emergency, self.status)
