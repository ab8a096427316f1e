import math

import numpy as np
import pytest

from airtaxi.world import (
    AgentState,
    ContractViolation,
    Flying,
    Grounded,
    KinematicParams,
    Passenger,
    RejectedAction,
    advance_flying,
    close_pairs,
    detect_conflicts,
    reward,
    step_kinematics,
    wrap_heading,
    wrap_pi,
)


def test_straight_flight(params):
    s = step_kinematics(AgentState(1, 0.0, 0.0), Flying(0.0), params)
    assert (s.x, s.y, s.theta) == pytest.approx((0.9, 0.0, 0.0), abs=1e-15)


def test_turning_step_uses_new_heading(params):
    # theta' = 0.4, then 0.9 km along 0.4 rad; values from a 30-digit evaluation
    s = step_kinematics(AgentState(1, 0.0, 0.0), Flying(0.04), params)
    assert s.theta == pytest.approx(0.4, rel=1e-12)
    assert s.x == pytest.approx(0.8289548946025966, rel=1e-12)
    assert s.y == pytest.approx(0.3504765080777854, rel=1e-12)


def test_constant_turn_traces_regular_polygon(params):
    # Constant heading increments make the positions the vertices of a
    # regular polygon with side v*dt and exterior angle omega*dt, so the
    # circumradius is v*dt / (2 sin(omega*dt/2)).
    omega = 0.04
    step_len = params.v * params.dt
    radius = step_len / (2 * math.sin(omega * params.dt / 2))
    s = AgentState(1, 0.0, 0.0)
    pts = []
    for _ in range(40):
        s = step_kinematics(s, Flying(omega), params)
        pts.append((s.x, s.y))
    pts = np.array(pts)
    # centre from the first three vertices
    (x1, y1), (x2, y2), (x3, y3) = pts[:3]
    d = 2 * (x1 * (y2 - y3) + x2 * (y3 - y1) + x3 * (y1 - y2))
    ux = ((x1**2 + y1**2) * (y2 - y3) + (x2**2 + y2**2) * (y3 - y1) + (x3**2 + y3**2) * (y1 - y2)) / d
    uy = ((x1**2 + y1**2) * (x3 - x2) + (x2**2 + y2**2) * (x1 - x3) + (x3**2 + y3**2) * (x2 - x1)) / d
    r = np.hypot(pts[:, 0] - ux, pts[:, 1] - uy)
    np.testing.assert_allclose(r, radius, rtol=1e-9)
    chords = np.hypot(*np.diff(pts, axis=0).T)
    np.testing.assert_allclose(chords, 2 * radius * math.sin(omega * params.dt / 2), rtol=1e-9)


def test_heading_wraps_into_range(params):
    s = step_kinematics(AgentState(1, 0.0, 0.0, theta=2 * math.pi - 0.1), Flying(0.04), params)
    assert 0 <= s.theta < 2 * math.pi
    assert s.theta == pytest.approx(0.3)
    assert wrap_heading(2 * math.pi) == 0.0
    assert wrap_heading(-1e-18) < 2 * math.pi
    assert wrap_pi(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_grounded_stay_and_takeoff(params):
    a = AgentState(1, 5.0, 5.0, grounded_at=2, flight_level=3)
    assert step_kinematics(a, Grounded(stay=True), params) == a
    up = step_kinematics(a, Grounded(theta_takeoff=1.0, stay=False), params)
    assert (up.x, up.y, up.theta, up.grounded_at, up.flight_level) == (5.0, 5.0, 1.0, 0, 3)


def test_landing_rules(params):
    ports = {1: (1.0, 0.0)}
    a = AgentState(1, 0.0, 0.0, target_vertiport=1)
    landed = step_kinematics(a, Flying(land=True), params, ports)
    assert (landed.x, landed.y, landed.grounded_at) == (1.0, 0.0, 1)
    far = AgentState(1, -5.0, 0.0, target_vertiport=1)
    with pytest.raises(RejectedAction):
        step_kinematics(far, Flying(land=True), params, ports)


def test_mismatched_actions_rejected(params):
    with pytest.raises(ContractViolation):
        step_kinematics(AgentState(1, 0, 0, grounded_at=1), Flying(0.0), params)
    with pytest.raises(ContractViolation):
        step_kinematics(AgentState(1, 0, 0), Grounded(), params)
    with pytest.raises(ContractViolation):
        step_kinematics(AgentState(1, 0, 0), Flying(0.05), params)


def test_params_validation():
    with pytest.raises(ValueError):
        KinematicParams(v=0.0)
    with pytest.raises(ValueError):
        KinematicParams(nmac_radius=1.0)
    with pytest.raises(ValueError):
        KinematicParams(los_radius=2.0)


def test_passenger_validation():
    with pytest.raises(ContractViolation):
        Passenger(1, 2, 2, 0.0)
    p = Passenger(1, 1, 2, 0.0)
    assert p.waiting


def test_conflict_examples(params):
    a = AgentState(0, 0.0, 0.0)
    b = AgentState(1, 0.5, 0.0)
    r = detect_conflicts([a, b], params)
    assert r.los_pairs == {(0, 1)} and not r.nmac_pairs
    other_level = AgentState(1, 0.5, 0.0, flight_level=2)
    assert not detect_conflicts([a, other_level], params).los_pairs
    grounded = AgentState(1, 0.05, 0.0, grounded_at=1)
    assert not detect_conflicts([a, grounded], params).los_pairs


def test_conflict_events_count_entries_only(params):
    a, b = AgentState(0, 0.0, 0.0), AgentState(1, 0.1, 0.0)
    r1 = detect_conflicts([a, b], params)
    assert (r1.new_los_events, r1.new_nmac_events) == (1, 1)
    r2 = detect_conflicts([a, b], params, r1)
    assert (r2.new_los_events, r2.new_nmac_events) == (0, 0)
    apart = detect_conflicts([a, AgentState(1, 5.0, 0.0)], params, r2)
    r3 = detect_conflicts([a, b], params, apart)
    assert r3.new_los_events == 1


def test_close_pairs_radius_is_strict():
    x = np.array([0.0, 0.926, 0.0])
    y = np.zeros(3)
    pairs = close_pairs(x, y, np.ones(3, int), np.array([True, True, False]), 0.926)
    assert pairs == []


def test_reward_examples():
    assert reward(3, 0, 10) == 3
    assert reward(0, 2, 10) == -20
    assert reward(1, 1, 1) == 0
    with pytest.raises(ContractViolation):
        reward(-1, 0, 1)


def test_advance_flying_vectorized_matches_scalar(params):
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-5, 5, (2, 50))
    th = rng.uniform(0, 2 * math.pi, 50)
    om = rng.uniform(-0.04, 0.04, 50)
    vx, vy, vt = advance_flying(x, y, th, om, params)
    for i in range(50):
        s = step_kinematics(AgentState(i, x[i], y[i], theta=th[i]), Flying(om[i]), params)
        assert (s.x, s.y, s.theta) == pytest.approx((vx[i], vy[i], vt[i]), abs=1e-12)
