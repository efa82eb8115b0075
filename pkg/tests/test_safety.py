import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safedrl.errors import MalformedObservationError
from safedrl.kinematics import advance
from safedrl.perception import EgoObservation, EntityKind, EntityObservation, ObservationMatrix
from safedrl.safety import (ACTIONS, SG_D, SG_T, AccelLaw, SafetyLayer, WorstCaseAdversary,
                            leave_margin, pss, stop_margin)
from safedrl.scenario import VEHICLE_LENGTH, make_scenario


def numeric_stop_distance(v, a, J, b_max, dt=1e-3):
    """Forward-integrate the braking ramp at 1 ms until standstill."""
    s = 0.0
    a = max(a, -b_max)
    while v > 0.0:
        a_next = max(a - J * dt, -b_max)
        a_mid = 0.5 * (a + a_next)
        v_next = v + a_mid * dt
        if v_next <= 0.0:
            s += v * v / (-2.0 * a_mid) if a_mid < 0 else v * dt
            break
        s += 0.5 * (v + v_next) * dt
        v, a = v_next, a_next
    return s


def make_obs(spec, s, v, a=0.0, ghosts=None, vehicles=(), front=None, sigma_d=0.0, sigma_v=0.0):
    ghosts = ghosts or {lane.lane_id: lane.entry_length for lane in spec.lanes}
    g = tuple(EntityObservation(EntityKind.GHOST, lid, d, spec.lane(lid).v_allow, 50.0, -lid)
              for lid, d in ghosts.items())
    ego = EgoObservation(spec.d_stl - s, v, spec.d_goal_line - s, a)
    return ObservationMatrix(ego, tuple(vehicles), g, front, sigma_d, sigma_v)


# --- margins -----------------------------------------------------------------

def test_stop_margin_matches_1ms_integration_on_200_states():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        v, a, J = rng.uniform(0.0, 15.0), rng.uniform(-10.0, 3.0), rng.uniform(1.0, 7.0)
        d_conf = rng.uniform(0.0, 60.0)
        err = abs(stop_margin(v, a, d_conf, J, 10.0) - (d_conf - numeric_stop_distance(v, a, J, 10.0)))
        worst = max(worst, err)
    assert worst < 0.01


def test_stop_margin_examples():
    assert stop_margin(0.0, 0.0, 12.0, 5.0) == 12.0
    assert stop_margin(10.0, 0.0, 30.0, math.inf, 10.0) == 25.0
    assert abs(stop_margin(10.0, 0.0, 30.0, 1e12, 10.0) - 25.0) < 1e-3
    m5 = stop_margin(10.0, 0.0, 30.0, 5.0, 10.0)
    assert m5 < 25.0
    assert abs(m5 - (30.0 - numeric_stop_distance(10.0, 0.0, 5.0, 10.0))) < 0.01


def test_leave_margin_constant_speed_example():
    adv = WorstCaseAdversary(1, 30.0, 10.0, AccelLaw.CONSTANT)
    # a_cap = 0 pins the ego at constant speed: 20 m at 10 m/s takes 2 s
    assert leave_margin(10.0, 0.0, 20.0, adv, 5.0, a_cap=0.0) == pytest.approx(1.0, abs=1e-12)


def test_leave_margin_sentinels():
    adv = WorstCaseAdversary(1, 30.0, 10.0, AccelLaw.CONSTANT)
    assert leave_margin(5.0, 0.0, -1.0, adv, 5.0) == math.inf
    inside = WorstCaseAdversary(1, -0.5, 10.0, AccelLaw.CONSTANT)
    assert leave_margin(5.0, 0.0, 10.0, inside, 5.0) == -math.inf


def test_adversary_arrival_time_against_integration():
    adv = WorstCaseAdversary(1, 47.0, 8.0, AccelLaw.ACCELERATE_TO_VMAX, 12.0, 1.0)
    d, v, t, dt = 47.0, 8.0, 0.0, 1e-4
    while d > 0.0:
        a = 1.0 if v < 12.0 else 0.0
        v_new = min(v + a * dt, 12.0)
        d -= 0.5 * (v + v_new) * dt
        v, t = v_new, t + dt
    assert adv.arrival_time() == pytest.approx(t, abs=1e-3)


# --- pss ---------------------------------------------------------------------

def pss_oracle(stops, leaves, front):
    stop_ok = True
    for m in stops:
        stop_ok = stop_ok and m > 0.5
    leave_ok = front > 0.5
    for m in leaves:
        leave_ok = leave_ok and m > 0.5
    return stop_ok or leave_ok


def test_pss_truth_table_on_1000_random_sets():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m = int(rng.integers(0, 5))
        pool = np.array([0.3, 0.5, 0.50001, 0.7, -1.0, 3.0, math.inf, -math.inf])
        stops = list(rng.choice(pool, m))
        leaves = list(rng.choice(pool, m))
        front = float(rng.choice(pool))
        assert pss(stops, leaves, front) == pss_oracle(stops, leaves, front)


def test_pss_examples():
    assert pss([], [])
    assert pss([25.0], [-3.0])
    assert not pss([0.4, 9.0], [9.0, 0.4])
    assert (SG_D, SG_T) == (0.5, 0.5)


# --- worst case ----------------------------------------------------------------

def test_ghost_only_lane():
    spec = make_scenario(v_allow=12.0)
    layer = SafetyLayer(spec)
    advs = layer.build_worst_case(make_obs(spec, 0.0, 5.0, ghosts={1: 40.0}))
    assert advs[0] == WorstCaseAdversary(1, 40.0, 12.0, AccelLaw.ACCELERATE_TO_VMAX, 12.0, 1.0)
    assert advs[-1] is None


def test_observed_candidate_replaces_ghost_iff_earlier():
    spec = make_scenario(v_allow=12.0)
    layer = SafetyLayer(spec)
    veh = EntityObservation(EntityKind.REAL, 1, 50.0, 6.0, 30.0, 7)
    for ghost_d, expect_vehicle in ((80.0, True), (40.0, False)):
        obs = make_obs(spec, 0.0, 5.0, ghosts={1: ghost_d}, vehicles=(veh,), sigma_d=1.0,
                       sigma_v=2.0)
        adv = layer.build_worst_case(obs)[0]
        cand = WorstCaseAdversary(1, 47.0, 12.0, AccelLaw.ACCELERATE_TO_VMAX, 12.0, 1.0)
        ghost = WorstCaseAdversary(1, ghost_d, 12.0, AccelLaw.ACCELERATE_TO_VMAX, 12.0, 1.0)
        assert (adv == cand) == expect_vehicle
        assert adv.arrival_time() == min(cand.arrival_time(), ghost.arrival_time())


def test_zero_uncertainty_reduces_to_observation():
    spec = make_scenario(v_allow=14.0)
    layer = SafetyLayer(spec)
    veh = EntityObservation(EntityKind.REAL, 1, 30.0, 7.0, 40.0, 3)
    adv = layer.build_worst_case(make_obs(spec, 0.0, 5.0, vehicles=(veh,)))[0]
    assert (adv.d_wc, adv.v_wc, adv.accel_law) == (30.0, 7.0, AccelLaw.ACCELERATE_TO_VMAX)


def test_front_vehicle_adversary():
    spec = make_scenario(("crossing", "merging"))
    layer = SafetyLayer(spec)
    front = EntityObservation(EntityKind.FRONT, 2, 20.0, 6.0, 30.0, 5)
    adv = layer.build_worst_case(make_obs(spec, 0.0, 5.0, front=front, sigma_d=1.0, sigma_v=2.0))[-1]
    assert (adv.d_wc, adv.v_wc, adv.accel_law) == (17.0, 0.0, AccelLaw.DECELERATE_TO_ZERO)


def test_missing_ghost_is_malformed():
    spec = make_scenario(("crossing", "crossing"))
    obs = make_obs(spec, 0.0, 5.0, ghosts={1: 50.0})
    with pytest.raises(MalformedObservationError):
        SafetyLayer(spec).build_worst_case(obs)


# --- psa ---------------------------------------------------------------------

def test_stopped_at_stop_line_is_safe():
    spec = make_scenario(v_allow=12.0, entry_length=100.0)
    layer = SafetyLayer(spec)
    obs = make_obs(spec, spec.d_stl, 0.0, ghosts={1: 100.0})
    assert layer.psa(obs, 0.0)


def test_fast_and_close_with_imminent_adversary_is_unsafe():
    spec = make_scenario(v_allow=12.0)
    layer = SafetyLayer(spec)
    z0 = spec.lanes[0].conflict_on_ego_route[0]
    # adversary at v_max 6 m out: arrives in 0.5 s
    obs = make_obs(spec, z0 - 3.0, 8.0, ghosts={1: 6.0})
    assert layer.build_worst_case(obs)[0].arrival_time() == pytest.approx(0.5)
    assert not layer.psa(obs, 1.5)
    # oracle: one-step successor under +1.5 by exact kinematics
    s, v, a = advance(z0 - 3.0, 8.0, 0.0, 1.5, 0.3)
    assert stop_margin(v, a, z0 - s, 5.0) <= SG_D


@given(st.floats(0.0, 40.0), st.floats(0.0, 14.0), st.floats(-3.0, 3.0),
       st.floats(1.0, 100.0), st.floats(0.0, 14.0), st.floats(0.0, 30.0), st.floats(0.0, 5.0))
def test_adversary_dominance(s, v, a, d_wc, v_wc, dd, dv):
    spec = make_scenario(v_allow=14.0)
    layer = SafetyLayer(spec)
    ego = layer._ego_from_obs(make_obs(spec, s, v, a))

    def is_pss(d, vv):
        adv = WorstCaseAdversary(1, d, vv, AccelLaw.ACCELERATE_TO_VMAX, 14.0, 1.0)
        stops, leaves, fm = layer.margins(ego, [adv, None], count=False)
        return pss(list(stops.values()), list(leaves.values()), fm)

    if is_pss(d_wc, v_wc):
        assert is_pss(d_wc + dd, max(v_wc - dv, 0.0))


@pytest.mark.parametrize("m", [1, 2, 4, 8])
def test_adversary_evaluations_linear_in_lanes(m):
    spec = make_scenario(["crossing"] * m)
    layer = SafetyLayer(spec)
    obs = make_obs(spec, 5.0, 6.0)
    for action in ACTIONS:
        before = layer.adversary_evaluations
        layer.psa(obs, action)
        assert layer.adversary_evaluations - before == m + 1


def test_pss_and_psa_are_pure():
    spec = make_scenario(("crossing", "crossing"))
    layer = SafetyLayer(spec)
    obs = make_obs(spec, 20.0, 9.0, ghosts={1: 30.0, 2: 60.0})
    assert [layer.psa(obs, a) for a in ACTIONS] == [layer.psa(obs, a) for a in ACTIONS]


# --- safe set and emergency ----------------------------------------------------

def grid_oracle(layer, obs):
    """Exhaustive 0.1 grid: smallest |j| whose one-step successor is PSS."""
    advs = layer.build_worst_case(obs)
    ego = layer._ego_from_obs(obs)
    J = layer.jerk_limit
    grid = [round(k * 0.1, 10) for k in range(-int(J * 10), int(J * 10) + 1)]
    ok = []
    for j in grid:
        s, v, a = advance(ego.s, ego.v, ego.a, j, 0.3)
        moved = [None if adv is None else adv.propagate(0.3) for adv in advs]
        e2 = type(ego)(s, v, a)
        stops, leaves, fm = layer.margins(e2, moved, count=False)
        if pss(list(stops.values()), list(leaves.values()), fm):
            ok.append(j)
    return min(abs(j) for j in ok) if ok else None


def test_emergency_matches_grid_search_when_fast_and_close():
    spec = make_scenario(v_allow=12.0)
    layer = SafetyLayer(spec)
    z0 = spec.lanes[0].conflict_on_ego_route[0]
    rng = np.random.default_rng(0)
    found = 0
    for _ in range(1500):
        gap, v, a, ghost = rng.uniform(2, 25), rng.uniform(3, 13), rng.uniform(-3, 3), rng.uniform(5, 60)
        obs = make_obs(spec, z0 - gap, v, a, ghosts={1: ghost})
        verdict = layer.verify(obs)
        if verdict.safe_set:
            continue
        j = verdict.emergency_jerk
        assert -5.0 <= j <= 5.0
        best = grid_oracle(layer, obs)
        if best is not None:
            found += 1
            assert abs(j) == pytest.approx(best)
    assert found > 10


def test_emergency_braking_example_in_band():
    spec = make_scenario(v_allow=12.0)
    layer = SafetyLayer(spec)
    z0 = spec.lanes[0].conflict_on_ego_route[0]
    obs = make_obs(spec, z0 - 14.0, 9.4, ghosts={1: 18.5})
    verdict = layer.verify(obs)
    assert verdict.safe_set == ()
    assert -5.0 <= verdict.emergency_jerk < 0.0


@pytest.mark.parametrize("seed", range(5))
def test_verdict_invariants(seed):
    rng = np.random.default_rng(seed)
    spec = make_scenario(("crossing", "crossing"))
    layer = SafetyLayer(spec, jerk_limit=float(rng.uniform(1, 7)))
    for _ in range(40):
        obs = make_obs(spec, rng.uniform(0, 40), rng.uniform(0, 14), rng.uniform(-3, 3),
                       ghosts={1: rng.uniform(0, 80), 2: rng.uniform(0, 80)})
        v = layer.verify(obs)
        assert v.safe_set == tuple(a for a in ACTIONS if layer.psa(obs, a))
        assert (v.emergency_jerk is None) == bool(v.safe_set)
        if v.emergency_jerk is not None:
            assert abs(v.emergency_jerk) <= layer.jerk_limit + 1e-12


def test_cleared_lane_imposes_no_constraint():
    spec = make_scenario()
    layer = SafetyLayer(spec)
    z1 = spec.lanes[0].conflict_on_ego_route[1]
    obs = make_obs(spec, z1 + VEHICLE_LENGTH + 0.5, 8.0, ghosts={1: 0.0})
    assert layer.verify(obs).safe_set == ACTIONS
