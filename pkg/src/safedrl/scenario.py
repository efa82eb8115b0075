"""Intersection geometry, occluding obstacles and randomized scenario sampling.

Plane layout: the ego approaches along the y axis (x = 0).  Intersecting lane
``k`` is a horizontal line at ``y = 3.5 * k``; even lanes carry traffic in +x,
odd lanes in -x.  Lane positions are expressed as the distance ``d`` of a
vehicle front to the start of the lane's conflict zone (positive while
approaching).  Route positions of the ego are arclengths from its spawn point.
"""
from __future__ import annotations

import configparser
import functools
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

LANE_WIDTH = 3.5
VEHICLE_LENGTH = 4.0
STOPLINE_GAP = 1.0
LANE_EXIT_LENGTH = 60.0
OCCLUSION_RESOLUTION = 0.5
DEFAULT_SENSOR_RANGE = 100.0


class LaneKind(str, Enum):
    EGO = "ego"
    CROSSING = "crossing"
    MERGING = "merging"


@dataclass(frozen=True)
class LaneGeometry:
    lane_id: int
    kind: LaneKind
    entry_length: float
    conflict_on_lane: tuple[float, float]
    conflict_on_ego_route: tuple[float, float]
    v_allow: float
    centerline: tuple[tuple[float, float], ...]

    @property
    def zone_width(self) -> float:
        return self.conflict_on_lane[1] - self.conflict_on_lane[0]

    def points_at(self, d) -> np.ndarray:
        """Plane coordinates of lane points at distance(s) ``d`` to the conflict zone."""
        d = np.atleast_1d(np.asarray(d, dtype=float))
        pts = np.asarray(self.centerline, dtype=float)
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        arc = self.entry_length - d
        idx = np.clip(np.searchsorted(cum, arc, side="right") - 1, 0, len(seg) - 1)
        frac = (arc - cum[idx]) / seg_len[idx]
        return pts[idx] + seg[idx] * frac[:, None]

    def point_at(self, d: float) -> tuple[float, float]:
        """Scalar fast path of :meth:`points_at` for a straight two-point centerline."""
        if len(self.centerline) != 2:
            x, y = self.points_at(d)[0]
            return float(x), float(y)
        (x0, y0), (x1, y1) = self.centerline
        length = math.hypot(x1 - x0, y1 - y0)
        f = (self.entry_length - d) / length
        return x0 + (x1 - x0) * f, y0 + (y1 - y0) * f

    def validate(self) -> None:
        c0, c1 = self.conflict_on_lane
        r0, r1 = self.conflict_on_ego_route
        if not c0 < c1 or not r0 < r1:
            raise ConfigurationError(f"lane {self.lane_id}: empty conflict interval")
        if self.entry_length <= 0.0 or self.v_allow <= 0.0:
            raise ConfigurationError(f"lane {self.lane_id}: entry_length and v_allow must be positive")
        if len(self.centerline) < 2:
            raise ConfigurationError(f"lane {self.lane_id}: centerline needs two points")


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    width: float
    height: float

    def validate(self) -> None:
        if self.width <= 0.0 or self.height <= 0.0:
            raise ConfigurationError("obstacle width and height must be positive")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return (cx - self.width / 2, cx + self.width / 2, cy - self.height / 2, cy + self.height / 2)


@dataclass(frozen=True)
class ScenarioSpec:
    lanes: tuple[LaneGeometry, ...]
    obstacles: tuple[Obstacle, ...]
    ego_route_length: float
    d_stl: float
    d_goal_line: float
    p_new: float
    p_coop: float
    desired_velocity_mu: float
    desired_velocity_sigma: float
    sigma_d: float
    sigma_v: float
    sensor_range: float = DEFAULT_SENSOR_RANGE
    seed: int = 0
    ego_v0: float = 5.0

    def validate(self) -> "ScenarioSpec":
        if not 0.0 <= self.p_new <= 1.0 or not 0.0 <= self.p_coop <= 1.0:
            raise ConfigurationError("p_new and p_coop must lie in [0, 1]")
        if not self.d_stl < self.d_goal_line <= self.ego_route_length:
            raise ConfigurationError("require d_stl < d_goal_line <= ego_route_length")
        if self.sigma_d < 0.0 or self.sigma_v < 0.0:
            raise ConfigurationError("noise levels must be non-negative")
        if self.sensor_range <= 0.0 or self.ego_v0 < 0.0:
            raise ConfigurationError("sensor_range must be positive and ego_v0 non-negative")
        ids = [lane.lane_id for lane in self.lanes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("lane ids must be unique")
        for lane in self.lanes:
            lane.validate()
            if lane.kind is LaneKind.EGO:
                raise ConfigurationError("intersecting lanes cannot have kind 'ego'")
        for obstacle in self.obstacles:
            obstacle.validate()
        for i, a in enumerate(self.lanes):
            for b in self.lanes[i + 1:]:
                lo = max(a.conflict_on_ego_route[0], b.conflict_on_ego_route[0])
                hi = min(a.conflict_on_ego_route[1], b.conflict_on_ego_route[1])
                if lo < hi and LaneKind.MERGING not in (a.kind, b.kind):
                    raise ConfigurationError("overlapping conflict zones require a merging lane")
        return self

    @property
    def route_y0(self) -> float:
        """Route coordinate that maps to plane y = 0 (center of the first lane)."""
        if not self.lanes:
            return self.d_stl + STOPLINE_GAP + LANE_WIDTH / 2
        first = min(self.lanes, key=lambda lane: lane.conflict_on_ego_route[0])
        return 0.5 * (first.conflict_on_ego_route[0] + first.conflict_on_ego_route[1])

    def ego_point(self, s_route: float) -> np.ndarray:
        return np.array([0.0, s_route - self.route_y0])

    def lane(self, lane_id: int) -> LaneGeometry:
        for lane in self.lanes:
            if lane.lane_id == lane_id:
                return lane
        raise KeyError(lane_id)

    def ego_lane(self) -> LaneGeometry:
        """The ego route described as a lane (for plotting and plane lookups)."""
        y0 = -self.route_y0
        return LaneGeometry(
            lane_id=-1, kind=LaneKind.EGO, entry_length=self.d_stl,
            conflict_on_lane=(self.d_stl, self.d_goal_line),
            conflict_on_ego_route=(self.d_stl, self.d_goal_line),
            v_allow=max([lane.v_allow for lane in self.lanes], default=14.0),
            centerline=((0.0, y0), (0.0, y0 + self.ego_route_length)),
        )


@dataclass(frozen=True)
class SamplingRanges:
    """Choice sets used by :func:`sample_scenario`; every set must be non-empty."""

    kinds: tuple[str, ...] = ("crossing", "merging")
    n_crossing_lanes: tuple[int, ...] = (1, 2)
    d_stl: tuple[float, ...] = (20.0, 25.0, 30.0)
    entry_length: tuple[float, ...] = (80.0,)
    v_allow: tuple[float, ...] = (14.0,)
    desired_velocity_mu: tuple[float, ...] = (6.0, 9.0, 12.0)
    desired_velocity_sigma: tuple[float, ...] = (2.0, 4.0, 6.0)
    p_new: tuple[float, ...] = (0.1, 0.4, 0.7)
    p_coop: tuple[float, ...] = (0.1, 0.4, 0.7)
    sigma_d: tuple[float, ...] = (1.0,)
    sigma_v: tuple[float, ...] = (2.0,)
    obstacles_per_lane: tuple[int, ...] = (0, 1, 2, 3)
    obstacle_size: tuple[float, float] = (2.0, 12.0)
    ego_v0: tuple[float, ...] = (5.0,)
    sensor_range: tuple[float, ...] = (DEFAULT_SENSOR_RANGE,)

    def validate(self) -> "SamplingRanges":
        for name, value in self.__dict__.items():
            if len(value) == 0:
                raise ConfigurationError(f"sampling range '{name}' is empty")
        bad = set(self.kinds) - {"crossing", "merging"}
        if bad:
            raise ConfigurationError(f"unknown scenario kinds {sorted(bad)}")
        lo, hi = self.obstacle_size
        if not 0.0 < lo <= hi:
            raise ConfigurationError("obstacle_size must satisfy 0 < low <= high")
        return self


DEFAULT_RANGES = SamplingRanges()


def build_lanes(kinds: Sequence[str], d_stl: float, entry_length: float = 80.0,
                v_allow: float | Sequence[float] = 14.0) -> tuple[LaneGeometry, ...]:
    """Lay out intersecting lanes beyond the stop line, alternating direction."""
    if isinstance(v_allow, (int, float)):
        v_allow = [float(v_allow)] * len(kinds)
    lanes = []
    for k, kind in enumerate(kinds):
        center = d_stl + STOPLINE_GAP + LANE_WIDTH / 2 + LANE_WIDTH * k
        y = LANE_WIDTH * k
        direction = 1.0 if k % 2 == 0 else -1.0
        start = (-direction * (LANE_WIDTH / 2 + entry_length), y)
        end = (direction * (LANE_WIDTH / 2 + LANE_EXIT_LENGTH), y)
        lanes.append(LaneGeometry(
            lane_id=k + 1,
            kind=LaneKind(kind),
            entry_length=float(entry_length),
            conflict_on_lane=(float(entry_length), float(entry_length) + LANE_WIDTH),
            conflict_on_ego_route=(center - LANE_WIDTH / 2, center + LANE_WIDTH / 2),
            v_allow=float(v_allow[k]),
            centerline=(start, end),
        ))
    return tuple(lanes)


def make_scenario(kinds: Sequence[str] = ("crossing",), *, d_stl: float = 25.0,
                  entry_length: float = 80.0, v_allow: float | Sequence[float] = 14.0,
                  obstacles: Sequence[Obstacle] = (), p_new: float = 0.1, p_coop: float = 0.1,
                  mu: float = 9.0, sigma: float = 2.0, sigma_d: float = 0.0, sigma_v: float = 0.0,
                  sensor_range: float = DEFAULT_SENSOR_RANGE, seed: int = 0,
                  ego_v0: float = 5.0) -> ScenarioSpec:
    lanes = build_lanes(kinds, d_stl, entry_length, v_allow)
    if lanes:
        d_goal = max(lane.conflict_on_ego_route[1] for lane in lanes) + VEHICLE_LENGTH
    else:
        d_goal = d_stl + STOPLINE_GAP + LANE_WIDTH + VEHICLE_LENGTH
    return ScenarioSpec(
        lanes=lanes, obstacles=tuple(obstacles), ego_route_length=d_goal + 20.0,
        d_stl=float(d_stl), d_goal_line=d_goal, p_new=p_new, p_coop=p_coop,
        desired_velocity_mu=mu, desired_velocity_sigma=sigma, sigma_d=sigma_d,
        sigma_v=sigma_v, sensor_range=sensor_range, seed=int(seed), ego_v0=ego_v0,
    ).validate()


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _choice(rng: np.random.Generator, options):
    return options[int(rng.integers(len(options)))]


def _sample_obstacles(rng, lanes, count_choices, size_range):
    obstacles = []
    lo, hi = size_range
    for lane in lanes:
        n = int(_choice(rng, count_choices))
        # the occluding quadrant is on the side the lane's traffic comes from
        side = -1.0 if lane.centerline[0][0] < 0.0 else 1.0
        for _ in range(n):
            w = float(rng.uniform(lo, hi))
            h = float(rng.uniform(lo, hi))
            cx = side * (LANE_WIDTH / 2 + 1.5 + w / 2 + float(rng.uniform(0.0, 30.0)))
            cy = -(LANE_WIDTH / 2 + 1.5 + h / 2 + float(rng.uniform(0.0, 20.0)))
            obstacles.append(Obstacle(center=(cx, cy), width=w, height=h))
    return tuple(obstacles)


def sample_scenario(rng, ranges: SamplingRanges = DEFAULT_RANGES) -> ScenarioSpec:
    """Draw a random scenario.  Identical seed and ranges give an identical spec."""
    ranges.validate()
    rng = _as_rng(rng)
    kind = _choice(rng, ranges.kinds)
    if kind == "crossing":
        kinds = ["crossing"] * int(_choice(rng, ranges.n_crossing_lanes))
    else:
        kinds = ["crossing", "merging"]
    d_stl = float(_choice(rng, ranges.d_stl))
    entry = float(_choice(rng, ranges.entry_length))
    v_allow = float(_choice(rng, ranges.v_allow))
    lanes = build_lanes(kinds, d_stl, entry, v_allow)
    obstacles = _sample_obstacles(rng, lanes, ranges.obstacles_per_lane, ranges.obstacle_size)
    d_goal = max(lane.conflict_on_ego_route[1] for lane in lanes) + VEHICLE_LENGTH
    return ScenarioSpec(
        lanes=lanes,
        obstacles=obstacles,
        ego_route_length=d_goal + 20.0,
        d_stl=d_stl,
        d_goal_line=d_goal,
        p_new=float(_choice(rng, ranges.p_new)),
        p_coop=float(_choice(rng, ranges.p_coop)),
        desired_velocity_mu=float(_choice(rng, ranges.desired_velocity_mu)),
        desired_velocity_sigma=float(_choice(rng, ranges.desired_velocity_sigma)),
        sigma_d=float(_choice(rng, ranges.sigma_d)),
        sigma_v=float(_choice(rng, ranges.sigma_v)),
        sensor_range=float(_choice(rng, ranges.sensor_range)),
        seed=int(rng.integers(0, 2**63 - 1)),
        ego_v0=float(_choice(rng, ranges.ego_v0)),
    ).validate()


def _segments_blocked(origin: np.ndarray, targets: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Slab test: does the segment origin->target cross any box?  Shape (K,)."""
    if len(bounds) == 0:
        return np.zeros(len(targets), dtype=bool)
    direction = targets - origin  # (K, 2)
    t_lo = np.zeros((len(targets), len(bounds)))
    t_hi = np.ones((len(targets), len(bounds)))
    for axis in (0, 1):
        dmin = bounds[:, 2 * axis][None, :] - origin[axis]
        dmax = bounds[:, 2 * axis + 1][None, :] - origin[axis]
        dir_ax = direction[:, axis][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = dmin / dir_ax
            t2 = dmax / dir_ax
        t_near = np.minimum(t1, t2)
        t_far = np.maximum(t1, t2)
        parallel = dir_ax == 0.0
        inside = (dmin < 0.0) & (dmax > 0.0)
        t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), t_near)
        t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), t_far)
        t_lo = np.maximum(t_lo, t_near)
        t_hi = np.minimum(t_hi, t_far)
    return np.any(t_lo < t_hi, axis=1)


@functools.lru_cache(maxsize=256)
def _lane_samples(lane: LaneGeometry, resolution: float):
    n = int(math.floor(lane.entry_length / resolution + 1e-9))
    ds = np.arange(n + 1) * resolution
    if ds[-1] < lane.entry_length:
        ds = np.append(ds, lane.entry_length)
    pts = lane.points_at(ds)
    ds.flags.writeable = False
    pts.flags.writeable = False
    return ds, pts


def visible_limit(ego_position, lane: LaneGeometry, obstacles: Sequence[Obstacle],
                  sensor_range: float = DEFAULT_SENSOR_RANGE,
                  resolution: float = OCCLUSION_RESOLUTION) -> float:
    """Largest distance-to-conflict up to which the lane is continuously visible."""
    origin = np.asarray(ego_position, dtype=float)
    ds, pts = _lane_samples(lane, resolution)
    in_range = np.hypot(pts[:, 0] - origin[0], pts[:, 1] - origin[1]) <= sensor_range
    bounds = np.array([o.bounds for o in obstacles], dtype=float).reshape(-1, 4)
    visible = in_range & ~_segments_blocked(origin, pts, bounds)
    hidden = np.flatnonzero(~visible)
    if hidden.size == 0:
        return float(lane.entry_length)
    k = int(hidden[0])
    return 0.0 if k == 0 else float(ds[k - 1])


# --- key-value serialization -------------------------------------------------

_SCALARS = ("ego_route_length", "d_stl", "d_goal_line", "p_new", "p_coop",
            "desired_velocity_mu", "desired_velocity_sigma", "sigma_d", "sigma_v",
            "sensor_range", "ego_v0")


def _fmt_pair(p) -> str:
    return f"{float(p[0])!r}, {float(p[1])!r}"


def _parse_pair(text: str) -> tuple[float, float]:
    a, b = (float(x) for x in text.split(","))
    return (a, b)


def scenario_to_text(spec: ScenarioSpec) -> str:
    """Serialize to an INI-style key-value document (lossless for all fields)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["scenario"] = {name: repr(float(getattr(spec, name))) for name in _SCALARS}
    cp["scenario"]["seed"] = str(int(spec.seed))
    cp["scenario"]["n_lanes"] = str(len(spec.lanes))
    cp["scenario"]["n_obstacles"] = str(len(spec.obstacles))
    for i, lane in enumerate(spec.lanes):
        cp[f"lane.{i}"] = {
            "lane_id": str(lane.lane_id),
            "kind": lane.kind.value,
            "entry_length": repr(lane.entry_length),
            "conflict_on_lane": _fmt_pair(lane.conflict_on_lane),
            "conflict_on_ego_route": _fmt_pair(lane.conflict_on_ego_route),
            "v_allow": repr(lane.v_allow),
            "centerline": "; ".join(_fmt_pair(p) for p in lane.centerline),
        }
    for i, obs in enumerate(spec.obstacles):
        cp[f"obstacle.{i}"] = {
            "center": _fmt_pair(obs.center),
            "width": repr(obs.width),
            "height": repr(obs.height),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def scenario_from_text(text: str) -> ScenarioSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    try:
        sec = cp["scenario"]
        lanes = []
        for i in range(sec.getint("n_lanes")):
            ls = cp[f"lane.{i}"]
            lanes.append(LaneGeometry(
                lane_id=ls.getint("lane_id"),
                kind=LaneKind(ls["kind"]),
                entry_length=float(ls["entry_length"]),
                conflict_on_lane=_parse_pair(ls["conflict_on_lane"]),
                conflict_on_ego_route=_parse_pair(ls["conflict_on_ego_route"]),
                v_allow=float(ls["v_allow"]),
                centerline=tuple(_parse_pair(p) for p in ls["centerline"].split(";")),
            ))
        obstacles = []
        for i in range(sec.getint("n_obstacles")):
            os_ = cp[f"obstacle.{i}"]
            obstacles.append(Obstacle(center=_parse_pair(os_["center"]),
                                      width=float(os_["width"]), height=float(os_["height"])))
        kwargs = {name: float(sec[name]) for name in _SCALARS}
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"malformed scenario document: {exc}") from exc
    return ScenarioSpec(lanes=tuple(lanes), obstacles=tuple(obstacles),
                        seed=sec.getint("seed"), **kwargs).validate()


def with_noise(spec: ScenarioSpec, sigma_d: float, sigma_v: float | None = None) -> ScenarioSpec:
    return replace(spec, sigma_d=float(sigma_d),
                   sigma_v=float(2.0 * sigma_d if sigma_v is None else sigma_v)).validate()
