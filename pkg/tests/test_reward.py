"""Reward oracles: the four boundary cases, branch exclusivity, monotonicity."""

import math

import numpy as np
import pytest

from airsep.airspace import (
    KT,
    NM,
    AircraftState,
    EventKind,
    Route,
    SafetyEvent,
    SectorParams,
    WorldState,
    detect_events,
)
from airsep.reward import RewardParams, compute_reward

SECTOR = SectorParams()
PARAMS = RewardParams()


def _aircraft(aid, pos, heading, cas, v_des):
    pos = np.asarray(pos, dtype=np.float64)
    direction = np.array([math.cos(heading), math.sin(heading)])
    route = Route([pos, pos + direction * 200 * NM])
    return AircraftState(
        aircraft_id=aid, route=route, leg=0, leg_offset=0.0,
        cas=cas, v_des=v_des, spawn_time=0.0, eta_deadline=1e9,
    )


def _states(*aircraft):
    return {ac.aircraft_id: ac for ac in aircraft}


def test_no_conflict_at_desired_speed():
    states = _states(_aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT))
    assert compute_reward(states, "A", [], PARAMS, SECTOR) == PARAMS.alpha_v


def test_nmac_penalty_is_minus_100():
    states = _states(
        _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
        _aircraft("B", [100.0, 0], 0.0, 100 * KT, 100 * KT),
    )
    events = [SafetyEvent(EventKind.NMAC, ("A", "B"), 0.0)]
    assert compute_reward(states, "A", events, PARAMS, SECTOR) == -100.0


def test_conflict_at_horizon_boundary_is_zero():
    states = _states(
        _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
        _aircraft("B", [10 * NM, 0], 0.0, 100 * KT, 100 * KT),
    )
    events = [SafetyEvent(EventKind.CONFLICT, ("A", "B"), 0.0, t_los=SECTOR.lookahead)]
    assert compute_reward(states, "A", events, PARAMS, SECTOR) == 0.0


def test_los_at_nmac_radius_saturates_both_clips():
    states = _states(
        _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
        _aircraft("B", [SECTOR.r_nmac, 0], 0.0, 100 * KT, 100 * KT),
    )
    events = [SafetyEvent(EventKind.LOS, ("A", "B"), 0.0)]
    expected = -PARAMS.alpha_conflict - PARAMS.alpha_los
    assert compute_reward(states, "A", events, PARAMS, SECTOR) == expected


def test_conflict_without_los_has_no_distance_term():
    states = _states(
        _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
        _aircraft("B", [8 * NM, 0], 0.0, 100 * KT, 100 * KT),
    )
    events = [SafetyEvent(EventKind.CONFLICT, ("A", "B"), 0.0, t_los=60.0)]
    expected = -PARAMS.alpha_conflict * (SECTOR.lookahead - 60.0) / SECTOR.lookahead
    assert compute_reward(states, "A", events, PARAMS, SECTOR) == expected


def _random_pairwise_world(rng, n=3):
    aircraft = []
    for i in range(n):
        if i > 0 and rng.uniform() < 0.1:
            # occasionally drop an aircraft right next to the previous one so
            # the NMAC branch is exercised too
            pos = aircraft[-1].position + rng.uniform(-400.0, 400.0, 2)
        else:
            pos = rng.uniform(-12 * NM, 12 * NM, 2)
        heading = rng.uniform(-np.pi, np.pi)
        cas = rng.uniform(0.0, 150 * KT)
        v_des = rng.uniform(60 * KT, 120 * KT)
        aircraft.append(_aircraft(f"AC{i}", pos, heading, cas, v_des))
    return WorldState(sector=SECTOR, routes=[], rng=rng, aircraft=aircraft)


def _expected_reward(states, aid, events):
    mine = [e for e in events if aid in e.pair]
    if any(e.kind is EventKind.NMAC for e in mine):
        return -PARAMS.alpha_nmac, "nmac"
    threats = [e for e in mine if e.kind in (EventKind.LOS, EventKind.CONFLICT)]
    if threats:
        t_min = min(0.0 if e.kind is EventKind.LOS else e.t_los for e in threats)
        t_hat = min(max((SECTOR.lookahead - t_min) / SECTOR.lookahead, 0.0), 1.0)
        r = -PARAMS.alpha_conflict * t_hat
        if any(e.kind is EventKind.LOS for e in threats):
            own = states[aid]
            d_min = min(
                float(np.linalg.norm(o.position - own.position))
                for k, o in states.items() if k != aid
            )
            d_hat = min(max((SECTOR.r_pz - d_min) / (SECTOR.r_pz - SECTOR.r_nmac), 0.0), 1.0)
            r -= PARAMS.alpha_los * d_hat
        return r, "conflict"
    own = states[aid]
    return PARAMS.alpha_v * (1.0 - abs(own.cas - own.v_des) / (SECTOR.v_max - SECTOR.v_min)), "speed"


def test_branch_exclusivity_and_range_on_random_states():
    rng = np.random.default_rng(99)
    branches_seen = set()
    for _ in range(3000):
        world = _random_pairwise_world(rng)
        events = detect_events(world)
        states = {ac.aircraft_id: ac for ac in world.aircraft}
        for aid in states:
            got = compute_reward(states, aid, events, PARAMS, SECTOR)
            expected, branch = _expected_reward(states, aid, events)
            assert got == expected
            branches_seen.add(branch)
            assert -PARAMS.alpha_nmac <= got <= PARAMS.alpha_v
            if branch == "nmac":
                assert got == -100.0
            elif branch == "conflict":
                assert got <= 0.0
            else:
                assert got >= 0.0
    assert branches_seen == {"nmac", "conflict", "speed"}


def test_monotone_in_time_to_intrusion():
    states = _states(
        _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
        _aircraft("B", [8 * NM, 0], 0.0, 100 * KT, 100 * KT),
    )
    last = None
    for t_los in (120.0, 90.0, 45.0, 10.0, 0.0):
        events = [SafetyEvent(EventKind.CONFLICT, ("A", "B"), 0.0, t_los=t_los)]
        r = compute_reward(states, "A", events, PARAMS, SECTOR)
        if last is not None:
            assert r <= last
        last = r


def test_monotone_in_distance_inside_zone():
    last = None
    for d in (4.5 * NM, 3 * NM, 1 * NM, SECTOR.r_nmac):
        states = _states(
            _aircraft("A", [0, 0], 0.0, 100 * KT, 100 * KT),
            _aircraft("B", [d, 0], 0.0, 100 * KT, 100 * KT),
        )
        events = [SafetyEvent(EventKind.LOS, ("A", "B"), 0.0)]
        r = compute_reward(states, "A", events, PARAMS, SECTOR)
        if last is not None:
            assert r <= last
        last = r


def test_speed_reward_uniquely_maximized_at_desired():
    v_des = 100 * KT
    best = compute_reward(_states(_aircraft("A", [0, 0], 0.0, v_des, v_des)), "A", [], PARAMS, SECTOR)
    for cas in (0.0, 50 * KT, 95 * KT, 105 * KT, 150 * KT):
        r = compute_reward(_states(_aircraft("A", [0, 0], 0.0, cas, v_des)), "A", [], PARAMS, SECTOR)
        assert r < best


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(alpha_v=0.0)
    with pytest.raises(ValueError):
        RewardParams(alpha_nmac=-1.0)
