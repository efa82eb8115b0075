"""Ground-truth world dynamics: ego jerk integration, IDM traffic, spawning and collisions.

Traffic vehicles are tracked by ``d``, the distance of their front bumper to the
start of their lane's conflict zone (decreasing while driving).  A vehicle on a
merging lane that has passed ``d = 0`` drives along the ego route ahead of the
merge point, at route coordinate ``conflict_start - d``.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DynamicsError
from .kinematics import advance
from .scenario import LANE_EXIT_LENGTH, LANE_WIDTH, VEHICLE_LENGTH, LaneKind, ScenarioSpec

DT_DECISION = 0.3
N_SUBSTEPS = 6
EGO_A_MIN = -10.0
EGO_A_MAX = 3.0
T_LIMIT = 60.0
COOP_TRIGGER = 15.0
COOP_YIELD_DISTANCE = 15.0
WARMUP_STEPS = 30


@dataclass(frozen=True)
class IdmParams:
    a_max: float = 1.0
    b_comf: float = 1.6
    b_max: float = 10.0
    s0: float = 2.0
    T: float = 1.6
    delta: float = 4.0

    def __post_init__(self):
        if min(self.a_max, self.b_comf, self.b_max, self.s0, self.T, self.delta) <= 0.0:
            raise ValueError("IDM parameters must be positive")


IDM = IdmParams()


def idm_acceleration(v: float, v_des: float, gap: float | None = None,
                     v_lead: float | None = None, p: IdmParams = IDM) -> float:
    """IDM acceleration, clamped to [-b_max, a_max].

    A non-positive desired velocity means "stop": the free-road term diverges
    and the result saturates at ``-b_max`` while moving (0 at standstill).
    """
    if v_des <= 0.0:
        return -p.b_max if v > 0.0 else 0.0
    acc = 1.0 - (v / v_des) ** p.delta
    if gap is not None:
        if gap <= 0.0:
            raise DynamicsError(f"non-positive gap {gap:.3f} m to leader")
        dv = v - (v if v_lead is None else v_lead)
        s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf)))
        acc -= (s_star / gap) ** 2
    return min(max(p.a_max * acc, -p.b_max), p.a_max)


@dataclass
class VehicleState:
    vehicle_id: int
    lane_id: int
    d: float
    v: float
    a: float
    v_des: float
    cooperative: bool
    length: float = VEHICLE_LENGTH
    v_des_nominal: float = 0.0
    yielding: bool = False

    @property
    def s(self) -> float:
        """Alias: position along the lane measured as distance to the conflict zone."""
        return self.d


@dataclass
class EgoState:
    s_route: float
    v: float
    a: float = 0.0
    last_jerk: float = 0.0
    length: float = VEHICLE_LENGTH


class EpisodeStatus(str, Enum):
    RUNNING = "running"
    GOAL_REACHED = "goal_reached"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass
class WorldState:
    spec: ScenarioSpec
    ego: EgoState
    vehicles: list = field(default_factory=list)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    n_steps: int = 0
    next_id: int = 1
    collided: bool = False
    idm: IdmParams = IDM

    @property
    def t(self) -> float:
        return self.n_steps * DT_DECISION

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)


def _lane_zone_on_route(spec: ScenarioSpec):
    return {lane.lane_id: lane.conflict_on_ego_route for lane in spec.lanes}


def _vehicle_in_lane_zone(d: float, length: float) -> bool:
    # body occupies [d, d + length] in distance-to-zone coordinates, zone is [-W, 0]
    return d < 0.0 and d + length > -LANE_WIDTH


def detect_collision(world: WorldState) -> bool:
    """True iff the ego and some vehicle occupy a shared conflict region."""
    ego = world.ego
    e_lo, e_hi = ego.s_route - ego.length, ego.s_route
    for veh in world.vehicles:
        lane = world.spec.lane(veh.lane_id)
        z0, z1 = lane.conflict_on_ego_route
        if lane.kind is LaneKind.MERGING:
            p_hi = z0 - veh.d
            lo = max(e_lo, p_hi - veh.length, z0)
            hi = min(e_hi, p_hi)
            if lo < hi:
                return True
        elif e_lo < z1 and e_hi > z0 and _vehicle_in_lane_zone(veh.d, veh.length):
            return True
    return False


def episode_status(world: WorldState, t_limit: float = T_LIMIT) -> EpisodeStatus:
    if world.collided or detect_collision(world):
        return EpisodeStatus.COLLISION
    if world.ego.s_route >= world.spec.d_goal_line:
        return EpisodeStatus.GOAL_REACHED
    if world.t > t_limit + 1e-9:
        return EpisodeStatus.TIMEOUT
    return EpisodeStatus.RUNNING


def _sample_v_des(rng: np.random.Generator, mu: float, sigma: float, v_allow: float) -> float:
    lo = min(1.0, v_allow)
    if sigma <= 0.0:
        return float(min(max(mu, lo), v_allow))
    for _ in range(1000):
        x = mu + sigma * rng.standard_normal()
        if lo <= x <= v_allow:
            return float(x)
    return float(min(max(mu, lo), v_allow))


def _spawn(world: WorldState) -> None:
    spec = world.spec
    rng = world.rng
    if not spec.lanes or rng.random() >= spec.p_new:
        return
    lane = spec.lanes[int(rng.integers(len(spec.lanes)))]
    v_des = _sample_v_des(rng, spec.desired_velocity_mu, spec.desired_velocity_sigma, lane.v_allow)
    coop = bool(rng.random() < spec.p_coop)
    on_lane = [veh for veh in world.vehicles if veh.lane_id == lane.lane_id]
    v0 = v_des
    if on_lane:
        last = max(on_lane, key=lambda veh: veh.d)
        gap = lane.entry_length - (last.d + last.length)
        if gap < world.idm.s0:
            return
        if gap < world.idm.s0 + v_des * world.idm.T:
            v0 = min(v_des, last.v)
    world.vehicles.append(VehicleState(
        vehicle_id=world.next_id, lane_id=lane.lane_id, d=lane.entry_length, v=v0, a=0.0,
        v_des=v_des, cooperative=coop, v_des_nominal=v_des))
    world.next_id += 1


def _update_cooperation(world: WorldState) -> None:
    ego = world.ego
    p = world.idm
    near = ego.s_route >= world.spec.d_stl - COOP_TRIGGER
    zones = _lane_zone_on_route(world.spec)
    for veh in world.vehicles:
        if not veh.cooperative:
            continue
        cleared = ego.s_route - ego.length >= zones[veh.lane_id][1]
        if veh.yielding:
            if cleared:
                veh.yielding = False
                veh.v_des = veh.v_des_nominal
        # yield only if the full stop ends at least COOP_YIELD_DISTANCE before the zone
        elif near and not cleared and veh.d - veh.v * veh.v / (2.0 * p.b_max) >= COOP_YIELD_DISTANCE:
            veh.yielding = True
            veh.v_des = 0.0


def _traffic_accelerations(world: WorldState) -> None:
    by_lane: dict[int, list] = {}
    for veh in world.vehicles:
        by_lane.setdefault(veh.lane_id, []).append(veh)
    for group in by_lane.values():
        group.sort(key=lambda veh: veh.d)
        leader = None
        for veh in group:
            if leader is None:
                veh.a = idm_acceleration(veh.v, veh.v_des, p=world.idm)
            else:
                gap = veh.d - leader.d - leader.length
                veh.a = idm_acceleration(veh.v, veh.v_des, gap, leader.v, world.idm)
            leader = veh


def _move_vehicle(veh: VehicleState, dt: float) -> None:
    v_new = veh.v + veh.a * dt
    if v_new < 0.0:
        dist = veh.v * veh.v / (-2.0 * veh.a) if veh.a < 0.0 else 0.0
        veh.d -= dist
        veh.v = 0.0
    else:
        veh.d -= veh.v * dt + 0.5 * veh.a * dt * dt
        veh.v = v_new


def step_world_inplace(world: WorldState, ego_jerk: float, dt_decision: float = DT_DECISION,
                       spawn: bool = True, move_ego: bool = True) -> WorldState:
    """Advance the world by one decision step, mutating ``world``."""
    if not math.isfinite(ego_jerk):
        raise ValueError("ego jerk must be finite")
    dt = dt_decision / N_SUBSTEPS
    ego = world.ego
    ego.last_jerk = float(ego_jerk)
    exit_d = -(LANE_WIDTH + LANE_EXIT_LENGTH)
    for _ in range(N_SUBSTEPS):
        _update_cooperation(world)
        _traffic_accelerations(world)
        if move_ego:
            ego.s_route, ego.v, ego.a = advance(ego.s_route, ego.v, ego.a, ego_jerk, dt,
                                                EGO_A_MIN, EGO_A_MAX)
        for veh in world.vehicles:
            _move_vehicle(veh, dt)
        world.vehicles = [veh for veh in world.vehicles if veh.d > exit_d]
        if detect_collision(world):
            world.collided = True
    if spawn:
        _spawn(world)
    world.n_steps += 1
    return world


def step_world(world: WorldState, ego_jerk: float, dt_decision: float = DT_DECISION) -> WorldState:
    """Pure variant of :func:`step_world_inplace`; ``world`` is left untouched."""
    return step_world_inplace(world.copy(), ego_jerk, dt_decision)


def initial_world(spec: ScenarioSpec, rng: np.random.Generator | int | None = None,
                  warmup_steps: int = WARMUP_STEPS, idm: IdmParams = IDM) -> WorldState:
    """Fresh world with the ego at the route start and pre-populated traffic."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(spec.seed if rng is None else rng)
    world = WorldState(spec=spec, ego=EgoState(s_route=0.0, v=spec.ego_v0), rng=rng, idm=idm)
    for _ in range(warmup_steps):
        step_world_inplace(world, 0.0, move_ego=False)
    world.n_steps = 0
    world.collided = False
    return world
