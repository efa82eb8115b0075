"""Proactive safety verification: worst-case adversaries, stop/leave margins, PSS/PSA.

A state is *proactively safe* (PSS) when the ego can either stop in front of
every uncleared conflict zone with a distance margin, or clear every uncleared
conflict zone ahead of every worst-case adversary with a time-headway margin
(and, on a merging route, still stop behind the worst-case front vehicle).
An action is *proactively safe* (PSA) when the state reached after one decision
step under that action, with every adversary propagated under its worst-case
law, is PSS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import MalformedObservationError
from .kinematics import (accel_limited_advance, accel_limited_arrival, advance, decel_advance,
                         stop_distance, time_to_cover)
from .perception import TRUNCATION, ObservationMatrix, effective_sigma
from .scenario import LANE_WIDTH, VEHICLE_LENGTH, LaneKind, ScenarioSpec
from .traffic import DT_DECISION, EGO_A_MAX, EGO_A_MIN

ACTIONS = (-1.5, 0.0, 1.5)
SG_D = 0.5
SG_T = 0.5
EMERGENCY_JERK_LIMIT = 5.0
EMERGENCY_GRID = 0.1


class AccelLaw(str, Enum):
    ACCELERATE_TO_VMAX = "accelerate_to_vmax"
    DECELERATE_TO_ZERO = "decelerate_to_zero"
    CONSTANT = "constant"


class ShieldMode(str, Enum):
    TRAINING = "training"      # an intervention ends the episode
    EVALUATION = "evaluation"  # the emergency jerk is executed and the episode continues


@dataclass(frozen=True)
class WorstCaseAdversary:
    lane_id: int
    d_wc: float
    v_wc: float
    accel_law: AccelLaw
    v_max: float = math.inf
    accel: float = 0.0

    def arrival_time(self) -> float:
        """Earliest time the adversary front reaches the conflict zone."""
        if self.d_wc <= 0.0:
            return 0.0
        if self.accel_law is AccelLaw.ACCELERATE_TO_VMAX:
            return accel_limited_arrival(self.d_wc, self.v_wc, self.v_max, self.accel)
        return self.d_wc / self.v_wc if self.v_wc > 0.0 else math.inf

    def propagate(self, dt: float) -> "WorstCaseAdversary":
        if self.accel_law is AccelLaw.ACCELERATE_TO_VMAX:
            dist, v = accel_limited_advance(self.v_wc, self.v_max, self.accel, dt)
        elif self.accel_law is AccelLaw.DECELERATE_TO_ZERO:
            dist, v = decel_advance(self.v_wc, self.accel, dt)
        else:
            dist, v = self.v_wc * dt, self.v_wc
        return WorstCaseAdversary(self.lane_id, self.d_wc - dist, v, self.accel_law,
                                  self.v_max, self.accel)


@dataclass(frozen=True)
class SafetyLimits:
    a_max: float = 1.0
    a_min: float = -10.0
    b_max_ego: float = 10.0
    ego_a_max: float = EGO_A_MAX
    truncation: float = TRUNCATION


@dataclass
class SafetyVerdict:
    psa: dict
    safe_set: tuple
    emergency_jerk: float | None
    stop_margins: dict = field(default_factory=dict)
    leave_margins: dict = field(default_factory=dict)
    front_margin: float = math.inf

    @property
    def mask(self) -> tuple:
        return tuple(bool(self.psa[a]) for a in ACTIONS)


def stop_margin(v: float, a: float, d_conflict: float, jerk_limit: float, b_max: float = 10.0) -> float:
    """Distance left before the conflict zone after a jerk-limited full stop."""
    return d_conflict - stop_distance(v, a, jerk_limit, b_max)


def leave_margin(v: float, a: float, clear_distance: float, adversary: WorstCaseAdversary,
                 jerk_limit: float, a_cap: float = EGO_A_MAX, a_floor: float = EGO_A_MIN) -> float:
    """Time headway between ego clearing the zone and the adversary arriving."""
    if clear_distance <= 0.0:
        return math.inf
    if adversary.d_wc <= 0.0:
        return -math.inf
    t_clear = time_to_cover(v, a, jerk_limit, clear_distance, a_floor, a_cap)[0]
    return adversary.arrival_time() - t_clear


def pss(stop_margins: Sequence[float], leave_margins: Sequence[float],
        front_margin: float = math.inf, sg_d: float = SG_D, sg_t: float = SG_T) -> bool:
    """(all stop margins > SG_d) or (all leave margins > SG_t and front margin > SG_d)."""
    if all(m > sg_d for m in stop_margins):
        return True
    return all(m > sg_t for m in leave_margins) and front_margin > sg_d


@dataclass
class _EgoKin:
    s: float
    v: float
    a: float


class SafetyLayer:
    """Verifier bound to one scenario geometry and one emergency jerk limit."""

    def __init__(self, spec: ScenarioSpec, jerk_limit: float = EMERGENCY_JERK_LIMIT,
                 limits: SafetyLimits = SafetyLimits(), sg_d: float = SG_D, sg_t: float = SG_T,
                 mode: ShieldMode = ShieldMode.EVALUATION, grid: float = EMERGENCY_GRID):
        if not jerk_limit > 0.0:
            raise ValueError("emergency jerk limit must be positive")
        self.spec = spec
        self.jerk_limit = float(jerk_limit)
        self.limits = limits
        self.sg_d = sg_d
        self.sg_t = sg_t
        self.mode = ShieldMode(mode)
        self.adversary_evaluations = 0
        self._lanes = [(lane.lane_id, lane.kind, lane.conflict_on_ego_route, lane.v_allow)
                       for lane in spec.lanes]
        n = int(round(self.jerk_limit / grid))
        grid_vals = [round(k * grid, 10) for k in range(-n, n + 1)]
        grid_vals = [j for j in grid_vals if abs(j) <= self.jerk_limit + 1e-12]
        for end in (-self.jerk_limit, self.jerk_limit):
            if end not in grid_vals:
                grid_vals.append(end)
        self.grid = np.array(sorted(grid_vals))

    # --- worst case -----------------------------------------------------------

    def build_worst_case(self, obs: ObservationMatrix) -> list:
        """One adversary per intersecting lane, then the front vehicle (or None)."""
        lim = self.limits
        out = []
        for lane_id, kind, _, v_max in self._lanes:
            ghost = obs.ghost(lane_id)
            if ghost is None:
                raise MalformedObservationError(f"no ghost entry for lane {lane_id}")
            best = WorstCaseAdversary(lane_id, ghost.d, v_max, AccelLaw.ACCELERATE_TO_VMAX,
                                      v_max, lim.a_max)
            t_best = best.arrival_time()
            for veh in obs.vehicles:
                if veh.lane_id != lane_id:
                    continue
                sd = lim.truncation * effective_sigma(obs.sigma_d, veh.d_e)
                sv = lim.truncation * effective_sigma(obs.sigma_v, veh.d_e)
                if kind is LaneKind.MERGING:
                    if veh.d + sd < 0.0:
                        continue  # merged for sure; handled as front vehicle
                elif veh.d + sd + VEHICLE_LENGTH <= -LANE_WIDTH:
                    continue  # rear has left the conflict zone for sure
                cand = WorstCaseAdversary(lane_id, veh.d - sd, min(veh.speed + sv, v_max),
                                          AccelLaw.ACCELERATE_TO_VMAX, v_max, lim.a_max)
                t = cand.arrival_time()
                if t < t_best:
                    best, t_best = cand, t
            out.append(best)
        front = None
        if obs.front is not None:
            sd = lim.truncation * effective_sigma(obs.sigma_d, obs.front.d_e)
            sv = lim.truncation * effective_sigma(obs.sigma_v, obs.front.d_e)
            front = WorstCaseAdversary(obs.front.lane_id, obs.front.d - sd,
                                       max(obs.front.speed - sv, 0.0),
                                       AccelLaw.DECELERATE_TO_ZERO, math.inf, lim.a_min)
        out.append(front)
        return out

    # --- margins --------------------------------------------------------------

    def _ego_from_obs(self, obs: ObservationMatrix) -> _EgoKin:
        return _EgoKin(self.spec.d_stl - obs.ego.d_stl, obs.ego.v, obs.ego.a)

    def margins(self, ego: _EgoKin, adversaries: list, count: bool = True):
        """Stop and leave margins over uncleared lanes plus the front-vehicle margin."""
        J = self.jerk_limit
        b = self.limits.b_max_ego
        stops, leaves = {}, {}
        for (lane_id, _, (z0, z1), _), adv in zip(self._lanes, adversaries):
            if count:
                self.adversary_evaluations += 1
            if ego.s - VEHICLE_LENGTH >= z1:
                continue  # lane cleared, no constraint
            stops[lane_id] = stop_margin(ego.v, ego.a, z0 - ego.s, J, b)
            leaves[lane_id] = leave_margin(ego.v, ego.a, z1 + VEHICLE_LENGTH - ego.s, adv, J,
                                           self.limits.ego_a_max, EGO_A_MIN)
        if count:
            self.adversary_evaluations += 1
        front = adversaries[-1]
        front_margin = math.inf
        if front is not None and leaves:
            clear = max(z1 for (_, _, (_, z1), _) in self._lanes) + VEHICLE_LENGTH - ego.s
            clear = max(clear, 0.0)
            _, v_c, a_c = time_to_cover(ego.v, ego.a, J, clear, EGO_A_MIN, self.limits.ego_a_max)
            if clear == 0.0:
                v_c, a_c = ego.v, ego.a
            ego_travel = clear + stop_distance(v_c, a_c, J, b)
            front_stop = front.d_wc + front.v_wc ** 2 / (-2.0 * front.accel)
            front_margin = front_stop - ego_travel
        return stops, leaves, front_margin

    def _is_pss(self, ego: _EgoKin, adversaries: list) -> bool:
        stops, leaves, front_margin = self.margins(ego, adversaries)
        return pss(list(stops.values()), list(leaves.values()), front_margin, self.sg_d, self.sg_t)

    def _successor(self, ego: _EgoKin, adversaries: list, jerk: float, dt: float):
        s, v, a = advance(ego.s, ego.v, ego.a, jerk, dt, EGO_A_MIN, self.limits.ego_a_max)
        advs = [None if adv is None else adv.propagate(dt) for adv in adversaries]
        return _EgoKin(s, v, a), advs

    # --- public predicates ----------------------------------------------------

    def psa(self, obs: ObservationMatrix, action: float, dt: float = DT_DECISION,
            adversaries: list | None = None) -> bool:
        if adversaries is None:
            adversaries = self.build_worst_case(obs)
        ego, advs = self._successor(self._ego_from_obs(obs), adversaries, action, dt)
        return self._is_pss(ego, advs)

    def safe_action_set(self, obs: ObservationMatrix, adversaries: list | None = None) -> tuple:
        if adversaries is None:
            adversaries = self.build_worst_case(obs)
        return tuple(a for a in ACTIONS if self.psa(obs, a, adversaries=adversaries))

    def emergency_action(self, obs: ObservationMatrix, adversaries: list | None = None) -> float:
        """Smallest-|jerk| grid command whose successor is PSS, else a fallback maneuver."""
        if adversaries is None:
            adversaries = self.build_worst_case(obs)
        ego = self._ego_from_obs(obs)
        stops, leaves, _ = self.margins(ego, adversaries, count=False)
        prefer_stop = all(m > 0.0 for m in stops.values())
        sign = -1.0 if prefer_stop else 1.0
        order = sorted(self.grid, key=lambda j: (round(abs(j), 10), -sign * j))
        for j in order:
            e2, advs = self._successor(ego, adversaries, float(j), DT_DECISION)
            if self._is_pss(e2, advs):
                return float(j)
        # nothing restores PSS: brake if a physical stop before every zone still works,
        # otherwise keep accelerating through the intersection
        e2, _ = self._successor(ego, adversaries, -self.jerk_limit, DT_DECISION)
        stops2, _, _ = self.margins(e2, adversaries, count=False)
        if all(m > 0.0 for m in stops2.values()):
            return -self.jerk_limit
        return self.jerk_limit

    def verify(self, obs: ObservationMatrix) -> SafetyVerdict:
        adversaries = self.build_worst_case(obs)
        flags = {a: self.psa(obs, a, adversaries=adversaries) for a in ACTIONS}
        safe = tuple(a for a in ACTIONS if flags[a])
        emergency = None if safe else self.emergency_action(obs, adversaries)
        stops, leaves, front_margin = self.margins(self._ego_from_obs(obs), adversaries, count=False)
        return SafetyVerdict(flags, safe, emergency, stops, leaves, front_margin)
