"""Noisy entity observations (real vehicles, ghost vehicles, front vehicle) and history stacking."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .scenario import LaneKind, visible_limit
from .traffic import WorldState

D_REF = 30.0
NOISE_CAP = 3.0
TRUNCATION = 3.0
HISTORY = 5


class EntityKind(str, Enum):
    EGO = "ego"
    REAL = "real_vehicle"
    GHOST = "ghost_vehicle"
    FRONT = "front_vehicle"


@dataclass(frozen=True)
class EntityObservation:
    kind: EntityKind
    lane_id: int
    d: float
    v: float
    d_e: float
    entity_id: int = -1

    @property
    def speed(self) -> float:
        return abs(self.v)


@dataclass(frozen=True)
class EgoObservation:
    d_stl: float
    v: float
    d_goal: float
    a: float = 0.0  # exact ego acceleration; read by the safety layer, not by the networks


@dataclass(frozen=True)
class ObservationMatrix:
    ego: EgoObservation
    vehicles: tuple
    ghosts: tuple
    front: EntityObservation | None = None
    sigma_d: float = 0.0
    sigma_v: float = 0.0
    t: float = 0.0

    @property
    def n_columns(self) -> int:
        return 1 + len(self.vehicles) + len(self.ghosts) + (self.front is not None)

    def to_matrix(self) -> np.ndarray:
        """3 x columns array: ego | vehicles | ghosts (| front)."""
        cols = [(self.ego.d_stl, self.ego.v, self.ego.d_goal)]
        entities = list(self.vehicles) + list(self.ghosts)
        if self.front is not None:
            entities.append(self.front)
        cols += [(e.d, e.v, e.d_e) for e in entities]
        return np.array(cols, dtype=float).T

    def ghost(self, lane_id: int) -> EntityObservation | None:
        for g in self.ghosts:
            if g.lane_id == lane_id:
                return g
        return None


def truncated_gaussian_sample(rng: np.random.Generator, mu: float, sigma: float,
                              a: float = TRUNCATION) -> float:
    """Gaussian sample restricted to [mu - a*sigma, mu + a*sigma] by rejection."""
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0.0:
        return float(mu)
    while True:
        z = rng.standard_normal()
        if -a <= z <= a:
            return float(mu + sigma * z)


def effective_sigma(sigma_base: float, d_e: float) -> float:
    return sigma_base * min(max(d_e / D_REF, 0.0), NOISE_CAP)


def _vehicle_point(world: WorldState, veh) -> tuple:
    lane = world.spec.lane(veh.lane_id)
    if lane.kind is LaneKind.MERGING and veh.d < 0.0:
        x, y = world.spec.ego_point(lane.conflict_on_ego_route[0] - veh.d)
        return x, y
    return lane.point_at(veh.d)


def sense(world: WorldState, rng: np.random.Generator) -> ObservationMatrix:
    """Observe the world: exact ego block, noisy visible vehicles, one ghost per lane."""
    spec = world.spec
    ego = world.ego
    origin = spec.ego_point(ego.s_route)
    limits = {lane.lane_id: visible_limit(origin, lane, spec.obstacles, spec.sensor_range)
              for lane in spec.lanes}
    vehicles = []
    front = None
    front_gap = math.inf
    for veh in sorted(world.vehicles, key=lambda x: (x.lane_id, x.d, x.vehicle_id)):
        if veh.d > limits[veh.lane_id]:
            continue
        pt = _vehicle_point(world, veh)
        d_e = float(math.hypot(pt[0] - origin[0], pt[1] - origin[1]))
        if d_e > spec.sensor_range:
            continue
        sd = effective_sigma(spec.sigma_d, d_e)
        sv = effective_sigma(spec.sigma_v, d_e)
        noise_d = truncated_gaussian_sample(rng, 0.0, sd)
        noise_v = truncated_gaussian_sample(rng, 0.0, sv)
        d_obs = veh.d + noise_d
        speed = max(veh.v + noise_v, 0.0)
        vehicles.append(EntityObservation(EntityKind.REAL, veh.lane_id, d_obs,
                                          speed if d_obs >= 0.0 else -speed, d_e, veh.vehicle_id))
        lane = spec.lane(veh.lane_id)
        if lane.kind is LaneKind.MERGING and veh.d < 0.0:
            # gap from ego front to the rear of a merged vehicle, same noise sample
            gap_true = lane.conflict_on_ego_route[0] - veh.d - veh.length - ego.s_route
            if gap_true > -veh.length and gap_true < front_gap:
                front_gap = gap_true
                front = EntityObservation(EntityKind.FRONT, veh.lane_id, gap_true + noise_d,
                                          speed, d_e, veh.vehicle_id)
    vehicles.sort(key=lambda e: (e.lane_id, e.d, e.entity_id))
    ghosts = []
    for lane in spec.lanes:
        d_o = limits[lane.lane_id]
        pt = lane.point_at(d_o)
        d_e = float(math.hypot(pt[0] - origin[0], pt[1] - origin[1]))
        ghosts.append(EntityObservation(EntityKind.GHOST, lane.lane_id, d_o, lane.v_allow,
                                        d_e, -lane.lane_id))
    ego_obs = EgoObservation(d_stl=spec.d_stl - ego.s_route, v=ego.v,
                             d_goal=spec.d_goal_line - ego.s_route, a=ego.a)
    return ObservationMatrix(ego=ego_obs, vehicles=tuple(vehicles), ghosts=tuple(ghosts),
                             front=front, sigma_d=spec.sigma_d, sigma_v=spec.sigma_v, t=world.t)


@dataclass(frozen=True)
class StackedState:
    """The last ``HISTORY`` observations, newest last."""

    observations: tuple

    def __post_init__(self):
        if len(self.observations) != HISTORY:
            raise ValueError(f"stacked state must hold exactly {HISTORY} observations")

    @classmethod
    def initial(cls, obs: ObservationMatrix) -> "StackedState":
        return cls((obs,) * HISTORY)

    @property
    def newest(self) -> ObservationMatrix:
        return self.observations[-1]


def stack(history: StackedState | None, obs: ObservationMatrix) -> StackedState:
    if history is None:
        return StackedState.initial(obs)
    return StackedState(history.observations[1:] + (obs,))
