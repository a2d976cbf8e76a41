import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caphev.model import ControlBounds, DomainError, default_layout
from caphev.ocp import (BoundaryConditions, HorizonError, SchedulingError, chain_waypoints,
                        check_feasibility, qp_oracle, qp_oracle_extrapolated, solve,
                        solve_fixed_terminal_speed, solve_free_terminal_speed,
                        trajectory_feasibility, waypoint_speeds)
from caphev.verify import random_boundary_problems

FREE = BoundaryConditions(0.0, 10.0, 0.0, 150.0, 17.0)
FIXED = BoundaryConditions(0.0, 10.0, 0.0, 150.0, 17.0, 8.0)


def test_free_speed_hand_example():
    sol = solve_free_terminal_speed(FREE)
    assert sol.a == pytest.approx(0.06, abs=1e-9)
    assert sol.b == pytest.approx(-0.6, abs=1e-9)
    assert sol.cost == pytest.approx(0.6, abs=1e-9)
    p, v, u = sol.trajectory.evaluate(10.0)
    assert v == pytest.approx(14.0, abs=1e-9)
    assert p == pytest.approx(150.0, abs=1e-9)
    assert u == 0.0


def test_fixed_speed_hand_example():
    sol = solve_fixed_terminal_speed(FIXED)
    assert sol.a == pytest.approx(-0.3, abs=1e-9)
    assert sol.b == pytest.approx(0.6, abs=1e-9)
    assert float(sol.u(0.0)) == pytest.approx(0.6, abs=1e-9)
    assert float(sol.u(10.0)) == pytest.approx(-2.4, abs=1e-9)
    p, v, _ = sol.trajectory.evaluate(10.0)
    assert (p, v) == (pytest.approx(150.0, abs=1e-9), pytest.approx(8.0, abs=1e-9))


def test_cruise_cases_have_zero_control():
    free = solve_free_terminal_speed(BoundaryConditions(0.0, 10.0, 0.0, 100.0, 10.0))
    fixed = solve_fixed_terminal_speed(BoundaryConditions(0.0, 10.0, 0.0, 100.0, 10.0, 10.0))
    for sol in (free, fixed):
        assert sol.cost == 0.0
        assert sol.a == 0.0 and sol.b == 0.0


def test_solve_dispatches_and_validates():
    assert solve(FREE).cost == solve_free_terminal_speed(FREE).cost
    assert solve(FIXED).cost == solve_fixed_terminal_speed(FIXED).cost
    with pytest.raises(DomainError):
        solve_fixed_terminal_speed(FREE)
    with pytest.raises(HorizonError):
        solve(BoundaryConditions(0.0, 0.01, 0.0, 1.0, 10.0))
    with pytest.raises(DomainError):
        BoundaryConditions(1.0, 1.0, 0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        BoundaryConditions(0.0, 1.0, 5.0, 1.0, 1.0)


def test_feasibility_flags_at_endpoint():
    sol = solve_fixed_terminal_speed(FIXED)
    assert check_feasibility(sol, ControlBounds()).feasible
    f = check_feasibility(sol, ControlBounds(u_min=-2.0))
    assert f.violations == ["u_min violated at tf"]
    assert f.u_range == (pytest.approx(-2.4), pytest.approx(0.6))
    assert check_feasibility(solve(BoundaryConditions(0, 10, 0, 100, 10)), ControlBounds()).feasible


def test_feasibility_finds_interior_speed_minimum():
    # decelerate hard then re-accelerate: minimum speed lies inside the horizon
    sol = solve_fixed_terminal_speed(BoundaryConditions(0.0, 20.0, 0.0, 60.0, 10.0, 10.0))
    f = check_feasibility(sol, ControlBounds(v_min=1.0))
    t = np.linspace(0.0, 20.0, 200001)
    _, v, _ = sol.trajectory.evaluate(t)
    assert f.v_range[0] == pytest.approx(v.min(), abs=1e-6)
    assert any(m.startswith("v_min violated at t=") for m in f.violations)


def test_qp_oracle_cruise_and_convergence():
    assert qp_oracle(BoundaryConditions(0, 10, 0, 100, 10), 50).cost == pytest.approx(0.0, abs=1e-15)
    c500 = qp_oracle(FREE, 500).cost
    c1000 = qp_oracle(FREE, 1000).cost
    assert abs(c1000 - 0.6) < abs(c500 - 0.6)
    assert (4 * c1000 - c500) / 3 == pytest.approx(0.6, rel=1e-9)
    assert qp_oracle(FIXED, 2000).cost == pytest.approx(solve(FIXED).cost, rel=1e-6)
    with pytest.raises(DomainError):
        qp_oracle(FREE, 5)


def test_qp_oracle_meets_boundary_conditions():
    res = qp_oracle(FIXED, 400)
    assert res.p[-1] == pytest.approx(150.0, abs=1e-9)
    assert res.v[-1] == pytest.approx(8.0, abs=1e-9)


def test_random_instances_match_oracle():
    for bc in random_boundary_problems(60, seed=11):
        ref = qp_oracle_extrapolated(bc, 400)
        assert solve(bc).cost == pytest.approx(ref, rel=1e-6, abs=1e-12)


bcs = st.builds(
    lambda T, v0, frac, vf, fixed: BoundaryConditions(0.0, T, 0.0, frac * max(v0, 1.0) * T, v0,
                                                      vf if fixed else None),
    st.floats(1.0, 40.0), st.floats(0.0, 25.0), st.floats(0.2, 1.6), st.floats(0.0, 25.0),
    st.booleans())


@settings(max_examples=60, deadline=None)
@given(bcs)
def test_control_is_affine_and_meets_boundary(bc):
    sol = solve(bc)
    t = np.linspace(bc.t0, bc.tf, 257)
    p, v, u = sol.trajectory.evaluate(t)
    assert np.max(np.abs(u - (sol.a * t + sol.b))) < 1e-12
    assert p[-1] == pytest.approx(bc.pf, abs=1e-8)
    if bc.vf is None:
        assert sol.segment.end_state()[2] == 0.0
    else:
        assert v[-1] == pytest.approx(bc.vf, abs=1e-9)
    assert sol.cost >= 0.0


@settings(max_examples=40, deadline=None)
@given(bcs.filter(lambda b: b.vf is not None))
def test_time_reversal_mirrors_control(bc):
    sol = solve(bc)
    mirror = solve(BoundaryConditions(bc.t0, bc.tf, bc.p0, bc.pf, bc.vf, bc.v0))
    t = np.linspace(bc.t0, bc.tf, 33)
    _, _, u = sol.trajectory.evaluate(t)
    _, _, um = mirror.trajectory.evaluate(bc.t0 + bc.tf - t)
    scale = max(1.0, float(np.max(np.abs(u))))
    assert np.max(np.abs(u + um)) < 1e-9 * scale


def _projected_perturbation(rng, s, w, T, fixed):
    phi = sum(rng.normal() * np.sin((k + 1) * np.pi * s / T + rng.uniform(0, np.pi)) for k in range(5))
    rows = [T - s] + ([np.ones_like(s)] if fixed else [])
    C = np.vstack(rows).T
    G = C.T @ (w[:, None] * C)
    return phi - C @ np.linalg.solve(G, C.T @ (w * phi))


@settings(max_examples=10, deadline=None)
@given(bcs, st.integers(0, 2**32 - 1))
def test_admissible_perturbations_never_lower_cost(bc, seed):
    """Variations that keep the terminal conditions cannot reduce the quadratic cost."""
    rng = np.random.default_rng(seed)
    sol = solve(bc)
    T = bc.horizon
    s = np.linspace(0.0, T, 4001)
    w = np.full_like(s, s[1])
    w[0] = w[-1] = 0.5 * s[1]
    _, _, u = sol.trajectory.evaluate(bc.t0 + s)
    base = 0.5 * np.sum(w * u * u)
    for _ in range(5):
        phi = _projected_perturbation(rng, s, w, T, bc.vf is not None)
        eps = rng.uniform(-1.0, 1.0)
        pert = 0.5 * np.sum(w * (u + eps * phi) ** 2)
        assert pert >= base - 1e-9 * max(1.0, base)


def test_chain_single_waypoint_equals_fixed_solution():
    traj = chain_waypoints(0.0, 17.0, 0.0, [(150.0, 10.0, 8.0)])
    assert traj.segments == (solve_fixed_terminal_speed(FIXED).segment,)


def test_chain_cruise_has_zero_control():
    traj = chain_waypoints(0.0, 12.0, 0.0, [(120.0, 10.0, 12.0), (360.0, 30.0, 12.0)])
    assert all(s.u0 == 0.0 and s.jerk == 0.0 for s in traj.segments)
    assert traj.cost() == 0.0


def test_chain_through_default_zones_is_continuous():
    lay = default_layout()
    speeds = {1: 17.0, 2: 8.0, 3: 11.0}
    waypoints = []
    t = 0.0
    prev_v, prev_p = 17.0, 0.0
    for z in lay.zones:
        v = speeds[z.id]
        t += 2.0 * (z.entry - prev_p) / (prev_v + v) + 1.0
        waypoints.append((z.entry, t, v))
        prev_v, prev_p = v, z.entry
    traj = chain_waypoints(0.0, 17.0, 0.0, waypoints)
    dp, dv = traj.joint_mismatch()
    assert dp < 1e-9 and dv < 1e-9
    for seg, (pz, tz, vz) in zip(traj.segments, waypoints):
        p_end, v_end, _ = seg.end_state()
        assert p_end == pytest.approx(pz, abs=1e-9) and v_end == pytest.approx(vz, abs=1e-9)
        bc = BoundaryConditions(seg.t_start, seg.t_end, seg.p0, pz, seg.v0, vz)
        assert seg.cost() == pytest.approx(qp_oracle_extrapolated(bc, 400), rel=1e-6)
    assert trajectory_feasibility(traj, ControlBounds()).feasible


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(20, 200), st.floats(2, 20), st.floats(1, 20)), min_size=1, max_size=5),
       st.floats(0, 20))
def test_chain_joints_are_continuous(legs, v0):
    p, t = 0.0, 0.0
    wps = []
    for dp, dt, v in legs:
        p += dp
        t += dt
        wps.append((p, t, v))
    traj = chain_waypoints(0.0, v0, 0.0, wps)
    dp, dv = traj.joint_mismatch()
    assert dp < 1e-9 * max(1.0, p) and dv < 1e-9 * 20


def test_chain_rejects_bad_waypoints():
    with pytest.raises(SchedulingError):
        chain_waypoints(0.0, 10.0, 0.0, [])
    with pytest.raises(SchedulingError):
        chain_waypoints(0.0, 10.0, 5.0, [(50.0, 5.0, 10.0)])
    with pytest.raises(SchedulingError):
        chain_waypoints(10.0, 10.0, 0.0, [(5.0, 5.0, 10.0)])


def test_free_last_waypoint_speed_is_free_terminal_speed():
    traj = chain_waypoints(0.0, 17.0, 0.0, [(150.0, 10.0, None)])
    assert traj.segments[0].end_state()[1] == pytest.approx(14.0, abs=1e-12)
    assert traj.segments[0].end_state()[2] == pytest.approx(0.0, abs=1e-12)


def test_free_speed_between_fixed_ends_matches_scan():
    wps = [(150.0, 10.0, None), (300.0, 25.0, 8.0)]
    grid = np.linspace(0.0, 30.0, 3001)
    costs = [chain_waypoints(0.0, 17.0, 0.0, [(150.0, 10.0, s), (300.0, 25.0, 8.0)]).cost() for s in grid]
    assert waypoint_speeds(0.0, 17.0, 0.0, wps)[0] == pytest.approx(grid[int(np.argmin(costs))], abs=0.01)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(20, 200), st.floats(2, 20), st.one_of(st.none(), st.floats(1, 20))),
                min_size=2, max_size=5),
       st.floats(0, 20), st.floats(-0.5, 0.5))
def test_free_waypoint_speeds_are_stationary(legs, v0, eps):
    p, t = 0.0, 0.0
    wps = []
    for dp, dt, v in legs:
        p += dp
        t += dt
        wps.append((p, t, v))
    traj = chain_waypoints(0.0, v0, 0.0, wps)
    speeds = waypoint_speeds(0.0, v0, 0.0, wps)
    for k, (_, _, v) in enumerate(wps):
        if v is not None:
            assert speeds[k] == v
            continue
        # Euler-Lagrange: control is continuous across a free waypoint, zero at a free end
        u_end = traj.segments[k].end_state()[2]
        u_next = traj.segments[k + 1].u0 if k + 1 < len(wps) else 0.0
        assert u_end == pytest.approx(u_next, abs=1e-9)
        moved = [(pz, tz, s) for (pz, tz, _), s in zip(wps, speeds)]
        moved[k] = (moved[k][0], moved[k][1], speeds[k] + eps)
        assert chain_waypoints(0.0, v0, 0.0, moved).cost() >= traj.cost() - 1e-9
