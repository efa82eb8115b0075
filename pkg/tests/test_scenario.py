from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safedrl.errors import ConfigurationError
from safedrl.scenario import (DEFAULT_RANGES, LANE_WIDTH, LaneKind, Obstacle, SamplingRanges,
                              make_scenario, sample_scenario, scenario_from_text,
                              scenario_to_text, visible_limit, with_noise)


def segment_hits_box(p, q, box):
    """Liang-Barsky clip of segment p->q against an axis-aligned box."""
    x0, x1, y0, y1 = box
    dx, dy = q[0] - p[0], q[1] - p[1]
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-dx, p[0] - x0), (dx, x1 - p[0]), (-dy, p[1] - y0), (dy, y1 - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return False
            continue
        r = qk / pk
        if pk < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


def oracle_visible_limit(origin, lane, obstacles, sensor_range, res=0.5):
    d = 0.0
    last = 0.0
    while d <= lane.entry_length + 1e-9:
        pt = lane.points_at(d)[0]
        ok = np.hypot(*(pt - origin)) <= sensor_range and not any(
            segment_hits_box(origin, pt, o.bounds) for o in obstacles)
        if not ok:
            return last
        last = d
        d += res
    return lane.entry_length


def test_default_sampling_uses_listed_levels():
    rng = np.random.default_rng(0)
    for _ in range(200):
        spec = sample_scenario(rng)
        assert spec.p_new in (0.1, 0.4, 0.7)
        assert spec.p_coop in (0.1, 0.4, 0.7)
        assert spec.desired_velocity_mu in (6.0, 9.0, 12.0)
        assert spec.desired_velocity_sigma in (2.0, 4.0, 6.0)


def test_thousand_samples_satisfy_invariants():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        spec = sample_scenario(rng)
        spec.validate()
        assert spec.d_stl < spec.d_goal_line <= spec.ego_route_length
        for lane in spec.lanes:
            c0, c1 = lane.conflict_on_lane
            assert c0 < c1 and lane.entry_length > 0 and lane.v_allow > 0


def test_sampling_is_deterministic():
    a = sample_scenario(np.random.default_rng(42))
    b = sample_scenario(np.random.default_rng(42))
    assert a == b
    assert sample_scenario(7) == sample_scenario(7)


def test_degenerate_ranges():
    ranges = SamplingRanges(kinds=("crossing",), n_crossing_lanes=(1,), d_stl=(25.0,),
                            desired_velocity_mu=(9.0,), desired_velocity_sigma=(2.0,),
                            p_new=(0.4,), p_coop=(0.4,), obstacles_per_lane=(0,))
    specs = [sample_scenario(np.random.default_rng(s), ranges) for s in range(5)]
    assert all(s.obstacles == () for s in specs)
    assert len({replace(s, seed=0) for s in specs}) == 1


def test_empty_choice_set_rejected():
    with pytest.raises(ConfigurationError):
        sample_scenario(0, replace(DEFAULT_RANGES, p_new=()))


def test_invalid_spec_rejected():
    spec = make_scenario()
    with pytest.raises(ConfigurationError):
        replace(spec, p_new=1.5).validate()
    with pytest.raises(ConfigurationError):
        replace(spec, d_goal_line=spec.d_stl - 1).validate()
    with pytest.raises(ConfigurationError):
        replace(spec, sigma_d=-1.0).validate()


def test_overlapping_zones_need_merging_lane():
    spec = make_scenario(("crossing", "crossing"))
    a, b = spec.lanes
    bad = replace(spec, lanes=(a, replace(b, conflict_on_ego_route=a.conflict_on_ego_route)))
    with pytest.raises(ConfigurationError):
        bad.validate()
    ok = replace(bad, lanes=(a, replace(b, kind=LaneKind.MERGING,
                                        conflict_on_ego_route=a.conflict_on_ego_route)))
    ok.validate()


def test_text_round_trip_is_lossless():
    rng = np.random.default_rng(5)
    for _ in range(50):
        spec = sample_scenario(rng)
        text = scenario_to_text(spec)
        assert scenario_from_text(text) == spec
        assert scenario_to_text(scenario_from_text(text)) == text


def test_malformed_text_rejected():
    with pytest.raises(ConfigurationError):
        scenario_from_text("[scenario]\nn_lanes = 1\n")


def test_with_noise_ties_velocity_noise():
    spec = with_noise(make_scenario(), 1.5)
    assert (spec.sigma_d, spec.sigma_v) == (1.5, 3.0)


# --- occlusion --------------------------------------------------------------

def test_unoccluded_lane_fully_visible():
    spec = make_scenario(entry_length=80.0)
    lane = spec.lanes[0]
    assert visible_limit(spec.ego_point(0.0), lane, (), 1000.0) == 80.0


def test_constructed_wall_limits_visibility_to_40m():
    # ego 10 m before the lane centre; lane points at d lie at x = -(1.75 + d), y = 0
    spec = make_scenario(entry_length=80.0)
    lane = spec.lanes[0]
    ego = np.array([0.0, -10.0])
    x0 = 0.95 * (LANE_WIDTH / 2 + 40.25)  # ray crosses the wall top (y = -0.5) at 95% of its run
    wall = Obstacle(center=(-(x0 + 100.0), -0.75), width=200.0, height=0.5)
    assert visible_limit(ego, lane, [wall], 1000.0) == 40.0
    assert oracle_visible_limit(ego, lane, [wall], 1000.0) == 40.0


def test_obstacle_behind_ego_does_not_occlude():
    spec = make_scenario()
    lane = spec.lanes[0]
    ego = spec.ego_point(0.0)
    behind = Obstacle(center=(0.0, ego[1] - 20.0), width=10.0, height=5.0)
    assert visible_limit(ego, lane, [behind]) == visible_limit(ego, lane, [])


def test_sensor_range_caps_visibility():
    spec = make_scenario(entry_length=80.0)
    lane = spec.lanes[0]
    ego = np.array([0.0, 0.0])
    lim = visible_limit(ego, lane, [], sensor_range=30.0)
    # points at x = -(1.75 + d) on the lane line through the ego
    assert lim == 28.0


obstacle_st = st.builds(
    lambda cx, cy, w, h: Obstacle(center=(cx, cy), width=w, height=h),
    st.floats(-60, 60), st.floats(-40, -2), st.floats(0.5, 15), st.floats(0.5, 15))


@given(st.lists(obstacle_st, max_size=4), st.floats(0.0, 30.0), st.floats(20.0, 150.0))
def test_visible_limit_matches_segment_oracle(obstacles, s_route, sensor_range):
    spec = make_scenario(("crossing", "crossing"), d_stl=25.0)
    ego = spec.ego_point(s_route)
    for lane in spec.lanes:
        assert visible_limit(ego, lane, obstacles, sensor_range) == \
            oracle_visible_limit(ego, lane, obstacles, sensor_range)


@given(st.lists(obstacle_st, max_size=3), obstacle_st, st.floats(0.0, 30.0))
def test_adding_obstacle_never_increases_visibility(obstacles, extra, s_route):
    spec = make_scenario(d_stl=25.0)
    ego = spec.ego_point(s_route)
    lane = spec.lanes[0]
    assert visible_limit(ego, lane, obstacles + [extra]) <= visible_limit(ego, lane, obstacles)


def test_visible_limit_is_pure():
    spec = sample_scenario(3)
    ego = spec.ego_point(10.0)
    for lane in spec.lanes:
        assert visible_limit(ego, lane, spec.obstacles) == visible_limit(ego, lane, spec.obstacles)
