"""Closed-form minimum-effort double-integrator planning and a discretized QP oracle.

Every planner here minimises ``0.5 * integral(u^2)`` for ``p' = v, v' = u``
with fixed terminal time. The Euler-Lagrange conditions make ``u`` affine in
time, so each solution is one :class:`~caphev.model.Segment`. State and
control bounds are not part of the closed form; :func:`check_feasibility`
verifies them afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ControlBounds, DomainError, Segment, Trajectory

MIN_HORIZON = 0.05  # s


class HorizonError(DomainError):
    pass


class SchedulingError(DomainError):
    pass


@dataclass(frozen=True)
class BoundaryConditions:
    t0: float
    tf: float
    p0: float
    pf: float
    v0: float
    vf: float | None = None

    def __post_init__(self):
        if not self.tf > self.t0:
            raise DomainError("need tf > t0")
        if not self.pf > self.p0:
            raise DomainError("need pf > p0")

    @property
    def horizon(self) -> float:
        return self.tf - self.t0


@dataclass
class Feasibility:
    violations: list[str] = field(default_factory=list)
    u_range: tuple[float, float] = (0.0, 0.0)
    v_range: tuple[float, float] = (0.0, 0.0)

    @property
    def feasible(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class OcpSolution:
    segment: Segment
    cost: float
    feasibility: Feasibility | None = None

    @property
    def a(self) -> float:
        """Slope of ``u(t) = a*t + b`` in absolute time."""
        return self.segment.jerk

    @property
    def b(self) -> float:
        return self.segment.u0 - self.segment.jerk * self.segment.t_start

    def u(self, t):
        return self.a * np.asarray(t, dtype=float) + self.b

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory((self.segment,))


def _check_horizon(T: float) -> None:
    if T < MIN_HORIZON:
        raise HorizonError(f"horizon too short ({T:.4g} s < {MIN_HORIZON} s)")


def solve_free_terminal_speed(bc: BoundaryConditions,
                              bounds: ControlBounds | None = None) -> OcpSolution:
    """Reach ``pf`` at ``tf`` with free final speed; transversality gives u(tf) = 0."""
    T = bc.horizon
    _check_horizon(T)
    D = bc.pf - bc.p0
    jerk = 3.0 * (bc.v0 * T - D) / T**3
    u0 = -jerk * T
    seg = Segment(bc.t0, bc.tf, bc.p0, bc.v0, u0, jerk)
    sol = OcpSolution(seg, seg.cost())
    if bounds is not None:
        sol = OcpSolution(seg, sol.cost, check_feasibility(sol, bounds))
    return sol


def solve_fixed_terminal_speed(bc: BoundaryConditions,
                               bounds: ControlBounds | None = None) -> OcpSolution:
    """Reach ``(pf, vf)`` at ``tf``."""
    if bc.vf is None:
        raise DomainError("terminal speed required")
    T = bc.horizon
    _check_horizon(T)
    dv = bc.vf - bc.v0
    excess = (bc.pf - bc.p0) - bc.v0 * T
    jerk = (6.0 * dv * T - 12.0 * excess) / T**3
    u0 = dv / T - 0.5 * jerk * T
    seg = Segment(bc.t0, bc.tf, bc.p0, bc.v0, u0, jerk)
    sol = OcpSolution(seg, seg.cost())
    if bounds is not None:
        sol = OcpSolution(seg, sol.cost, check_feasibility(sol, bounds))
    return sol


def solve(bc: BoundaryConditions, bounds: ControlBounds | None = None) -> OcpSolution:
    if bc.vf is None:
        return solve_free_terminal_speed(bc, bounds)
    return solve_fixed_terminal_speed(bc, bounds)


def segment_extrema(seg: Segment) -> tuple[tuple[float, float, str, str], tuple[float, float, str, str]]:
    """Exact (min, max) of u and v over the segment with where they occur."""
    T = seg.duration
    u_a, u_b = seg.u0, seg.u0 + seg.jerk * T
    u_lo, u_lo_at = (u_a, "t0") if u_a <= u_b else (u_b, "tf")
    u_hi, u_hi_at = (u_a, "t0") if u_a >= u_b else (u_b, "tf")

    cands = [(seg.v0, "t0"), (float(seg.state(seg.t_end)[1]), "tf")]
    if seg.jerk != 0.0:
        tau = -seg.u0 / seg.jerk
        if 0.0 < tau < T:
            cands.append((float(seg.state(seg.t_start + tau)[1]), f"t={seg.t_start + tau:.6g}"))
    v_lo, v_lo_at = min(cands, key=lambda c: c[0])
    v_hi, v_hi_at = max(cands, key=lambda c: c[0])
    return (u_lo, u_hi, u_lo_at, u_hi_at), (v_lo, v_hi, v_lo_at, v_hi_at)


def check_feasibility(sol: OcpSolution | Segment, bounds: ControlBounds,
                      tol: float = 1e-9) -> Feasibility:
    """Flag control/speed bound exceedances using analytic extrema."""
    seg = sol.segment if isinstance(sol, OcpSolution) else sol
    (u_lo, u_hi, u_lo_at, u_hi_at), (v_lo, v_hi, v_lo_at, v_hi_at) = segment_extrema(seg)
    out = Feasibility(u_range=(u_lo, u_hi), v_range=(v_lo, v_hi))
    if u_lo < bounds.u_min - tol:
        out.violations.append(f"u_min violated at {u_lo_at}")
    if u_hi > bounds.u_max + tol:
        out.violations.append(f"u_max violated at {u_hi_at}")
    if v_lo < bounds.v_min - tol:
        out.violations.append(f"v_min violated at {v_lo_at}")
    if v_hi > bounds.v_max + tol:
        out.violations.append(f"v_max violated at {v_hi_at}")
    return out


def trajectory_feasibility(traj: Trajectory, bounds: ControlBounds) -> Feasibility:
    out = Feasibility(u_range=(np.inf, -np.inf), v_range=(np.inf, -np.inf))
    for k, seg in enumerate(traj.segments):
        f = check_feasibility(seg, bounds)
        out.violations.extend(f"segment {k}: {m}" for m in f.violations)
        out.u_range = (min(out.u_range[0], f.u_range[0]), max(out.u_range[1], f.u_range[1]))
        out.v_range = (min(out.v_range[0], f.v_range[0]), max(out.v_range[1], f.v_range[1]))
    return out


def waypoint_speeds(p0: float, v0: float, t0: float,
                    waypoints: Sequence[tuple[float, float, float | None]]) -> list[float]:
    """Fill ``None`` waypoint speeds with the values minimising the chained cost.

    With positions and times fixed, a piece of duration ``T`` and length ``D``
    between speeds ``a`` and ``b`` costs
    ``2(a^2 + ab + b^2)/T - 6D(a + b)/T^2 + 6D^2/T^3``, so the free speeds
    solve a symmetric tridiagonal linear system. A free last speed is
    equivalent to a free terminal speed on that piece.
    """
    pts = [(p0, t0, v0)] + [tuple(w) for w in waypoints]
    free = [k for k in range(1, len(pts)) if pts[k][2] is None]
    speeds = [w[2] for w in pts]
    if not free:
        return speeds[1:]
    col = {k: i for i, k in enumerate(free)}
    H = np.zeros((len(free), len(free)))
    g = np.zeros(len(free))
    for k in range(1, len(pts)):
        (pa, ta, va), (pb, tb, vb) = pts[k - 1], pts[k]
        T, D = tb - ta, pb - pa
        _check_horizon(T)
        # d cost / da = (4a + 2b)/T - 6D/T^2, symmetric in b
        for me, other, v_other in ((k - 1, k, vb), (k, k - 1, va)):
            if me not in col:
                continue
            i = col[me]
            H[i, i] += 4.0 / T
            g[i] += 6.0 * D / T**2
            if other in col:
                H[i, col[other]] += 2.0 / T
            else:
                g[i] -= 2.0 * v_other / T
    sol = np.linalg.solve(H, g)
    for k, i in col.items():
        speeds[k] = float(sol[i])
    return speeds[1:]


def chain_waypoints(p0: float, v0: float, t0: float,
                    waypoints: Sequence[tuple[float, float, float | None]]) -> Trajectory:
    """Concatenate fixed-terminal-speed pieces through ``(position, time, speed)`` waypoints.

    A speed of ``None`` leaves that waypoint speed to the optimiser
    (:func:`waypoint_speeds`); the position and time are still enforced.
    """
    if not waypoints:
        raise SchedulingError("no waypoints")
    p, t = p0, t0
    for pz, tz, _ in waypoints:
        if tz <= t:
            raise SchedulingError(f"waypoint time {tz} not after {t}")
        if pz <= p:
            raise SchedulingError(f"waypoint position {pz} not after {p}")
        p, t = pz, tz
    speeds = waypoint_speeds(p0, v0, t0, waypoints)
    segs = []
    p, v, t = p0, v0, t0
    for (pz, tz, _), vz in zip(waypoints, speeds):
        sol = solve_fixed_terminal_speed(BoundaryConditions(t, tz, p, pz, v, vz))
        segs.append(sol.segment)
        p, v, t = pz, vz, tz
    return Trajectory(tuple(segs))


# --------------------------------------------------------------------------
# verification oracle


@dataclass(frozen=True)
class QpResult:
    cost: float
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    u: np.ndarray


def qp_oracle(bc: BoundaryConditions, n_steps: int) -> QpResult:
    """Discretized problem with trapezoidal dynamics, solved through its KKT system.

    Decision variables are node controls ``u_0..u_n``; the cost is the
    trapezoidal sum of ``u^2 dt / 2``. The terminal conditions are linear in
    ``u``; the equality-constrained least-squares problem is solved directly.
    """
    n = int(n_steps)
    if n < 10:
        raise DomainError("n_steps must be >= 10")
    T = bc.horizon
    dt = T / n
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    # v_j = v0 + dt * sum_{s<j} (u_s + u_{s+1}) / 2, so sum_j w_j v_j is linear in u
    tail = np.concatenate((np.cumsum(w[::-1])[::-1][1:], [0.0]))  # sum_{j>k} w_j
    coef = 0.5 * tail + 0.5 * (tail + w)
    coef[0] = 0.5 * tail[0]
    rows = [dt * dt * coef]
    rhs = [bc.pf - bc.p0 - bc.v0 * T]
    if bc.vf is not None:
        rows.append(dt * w)
        rhs.append(bc.vf - bc.v0)
    A = np.vstack(rows)
    r = np.array(rhs)
    Winv = 1.0 / (dt * w)
    G = (A * Winv) @ A.T
    if np.linalg.cond(G) > 1e14:
        raise DomainError("singular oracle system")
    lam = np.linalg.solve(G, r)
    u = Winv * (A.T @ lam)
    cost = 0.5 * float(np.sum(dt * w * u * u))
    v = bc.v0 + dt * np.concatenate(([0.0], np.cumsum(0.5 * (u[:-1] + u[1:]))))
    p = bc.p0 + np.concatenate(([0.0], np.cumsum(0.5 * dt * (v[:-1] + v[1:]))))
    t = bc.t0 + dt * np.arange(n + 1)
    return QpResult(cost, t, p, v, u)


def qp_oracle_extrapolated(bc: BoundaryConditions, n_steps: int) -> float:
    """Richardson combination of oracle costs at ``n`` and ``2n`` steps."""
    c1 = qp_oracle(bc, n_steps).cost
    c2 = qp_oracle(bc, 2 * n_steps).cost
    return (4.0 * c2 - c1) / 3.0
