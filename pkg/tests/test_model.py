import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caphev.model import (ControlBounds, CorridorLayout, DomainError, Route, SafetyGapModel, Segment,
                          Trajectory, Zone, check_rear_end_safety, cruise, default_layout,
                          gap_required)


@pytest.mark.parametrize("v, d0, rho, expected", [
    (0.0, 2.0, 1.2, 2.0),
    (10.0, 0.0, 1.2, 12.0),
    (17.0, 2.0, 1.2, 22.4),
])
def test_gap_required_values(v, d0, rho, expected):
    assert gap_required(v, SafetyGapModel(d0, rho)) == pytest.approx(expected, abs=1e-12)


def test_gap_required_rejects_negative_speed():
    with pytest.raises(DomainError):
        gap_required(-0.1, SafetyGapModel())


@given(st.floats(0, 5), st.floats(0.1, 3), st.floats(0, 40), st.floats(0, 40))
def test_gap_required_monotone(d0, rho, v1, v2):
    m = SafetyGapModel(d0, rho)
    lo, hi = sorted((v1, v2))
    assert gap_required(lo, m) <= gap_required(hi, m)


def test_bad_models_rejected():
    with pytest.raises(DomainError):
        SafetyGapModel(time_headway=0.0)
    with pytest.raises(DomainError):
        ControlBounds(u_min=1.0)
    with pytest.raises(DomainError):
        ControlBounds(v_min=5.0, v_max=4.0)


def test_parallel_cruise_is_safe():
    lead = cruise(0.0, 30.0, 50.0, 10.0)
    foll = cruise(0.0, 30.0, 0.0, 10.0)
    rep = check_rear_end_safety(lead, foll, SafetyGapModel())
    assert rep.safe and rep.violations == []


def test_catching_follower_flags_first_crossing():
    lead = cruise(0.0, 20.0, 30.0, 5.0)
    foll = cruise(0.0, 20.0, 0.0, 10.0)
    rep = check_rear_end_safety(lead, foll, SafetyGapModel(), dt=0.1)
    assert not rep.safe
    # spacing 30 - 5t falls below 2 + 12 = 14 m after t = 3.2 s
    assert rep.first_violation == pytest.approx(3.3, abs=1e-9)
    assert any(s <= 0.0 for _, s, _ in rep.violations)


def test_disjoint_windows_not_comparable():
    rep = check_rear_end_safety(cruise(0, 5, 100, 10), cruise(6, 9, 0, 10), SafetyGapModel())
    assert not rep.comparable and not rep.safe


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 500), st.floats(5, 40), st.floats(0, 15), st.floats(0, 15))
def test_safety_check_invariant_under_time_shift(shift, gap, v_lead, v_foll):
    lead = cruise(0.0, 20.0, gap, v_lead)
    foll = cruise(0.0, 20.0, 0.0, v_foll)
    m = SafetyGapModel()
    a = check_rear_end_safety(lead, foll, m)
    b = check_rear_end_safety(lead.shifted(shift), foll.shifted(shift), m)
    assert len(a.violations) == len(b.violations)
    for (ta, sa, na), (tb, sb, nb) in zip(a.violations, b.violations):
        assert tb - ta == pytest.approx(shift, abs=1e-6)
        assert sa == pytest.approx(sb, abs=1e-9) and na == pytest.approx(nb, abs=1e-9)


def test_segment_state_matches_constant_jerk_kinematics():
    seg = Segment(2.0, 6.0, 10.0, 5.0, 0.5, -0.25)
    p, v, u = seg.state(4.0)
    tau = 2.0
    assert u == pytest.approx(0.5 - 0.25 * tau)
    assert v == pytest.approx(5.0 + 0.5 * tau - 0.125 * tau**2)
    assert p == pytest.approx(10.0 + 5.0 * tau + 0.25 * tau**2 - 0.25 * tau**3 / 6.0)


def test_segment_cost_matches_quadrature():
    seg = Segment(0.0, 7.0, 0.0, 3.0, 1.1, -0.4)
    t = np.linspace(0.0, 7.0, 20001)
    _, _, u = seg.state(t)
    assert seg.cost() == pytest.approx(0.5 * np.trapezoid(u * u, t), rel=1e-7)


def test_trajectory_evaluate_picks_segments_and_extrapolates():
    traj = Trajectory((Segment(0.0, 1.0, 0.0, 1.0, 0.0, 0.0), Segment(1.0, 2.0, 1.0, 1.0, 2.0, 0.0)))
    p, v, u = traj.evaluate(np.array([0.5, 1.5, 3.0]))
    assert list(u) == [0.0, 2.0, 2.0]
    assert p[1] == pytest.approx(1.0 + 0.5 + 0.25)
    assert traj.evaluate(0.5) == (0.5, 1.0, 0.0)
    ext = traj.with_cruise(4.0)
    assert ext.evaluate(4.0)[1] == pytest.approx(3.0)
    assert ext.evaluate(4.0)[2] == 0.0


def test_time_at_position():
    traj = cruise(1.0, 11.0, 0.0, 10.0)
    assert traj.time_at_position(35.0) == pytest.approx(4.5, abs=1e-9)
    with pytest.raises(DomainError):
        traj.time_at_position(1000.0)


def test_default_layout_geometry():
    lay = default_layout()
    assert [z.entry for z in lay.zones] == [400.0, 800.0, 1200.0]
    assert [z.control_start for z in lay.zones] == [250.0, 650.0, 1050.0]
    assert lay.zone(2).length == 125.0 and lay.total_length == 1300.0
    assert [lay.zone(i).desired_speed for i in (1, 2, 3)] == [17.0, 8.0, 11.0]
    ramp = lay.route("ramp")
    assert ramp.lane_at(399.0) == "ramp" and ramp.lane_at(400.0) == "main"
    assert lay.desired_speed(lay.route("main"), 850.0) == 8.0
    assert lay.desired_speed(lay.route("main"), 950.0) == 11.0
    assert lay.next_speed_change(lay.route("main"), 100.0) == (800.0, 8.0)
    with pytest.raises(KeyError):
        lay.route("nowhere")


def test_layout_validation():
    z = Zone(1, "a", 100.0, 10.0, 50.0, 10.0)
    with pytest.raises(DomainError):
        CorridorLayout(105.0, (z,), (), ((0.0, 10.0),))
    with pytest.raises(DomainError):
        CorridorLayout(200.0, (z,), (Route("r", 0.0, 100.0, (9,)),), ((0.0, 10.0),))
    with pytest.raises(DomainError):
        CorridorLayout(200.0, (z, z), (), ((0.0, 10.0),))


def test_joint_mismatch_detects_gaps():
    good = Trajectory((Segment(0.0, 1.0, 0.0, 1.0, 0.0, 0.0), Segment(1.0, 2.0, 1.0, 1.0, 0.0, 0.0)))
    bad = Trajectory((Segment(0.0, 1.0, 0.0, 1.0, 0.0, 0.0), Segment(1.0, 2.0, 1.5, 2.0, 0.0, 0.0)))
    assert good.joint_mismatch() == (0.0, 0.0)
    dp, dv = bad.joint_mismatch()
    assert math.isclose(dp, 0.5) and math.isclose(dv, 1.0)
