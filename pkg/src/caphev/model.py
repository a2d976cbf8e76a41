"""Shared domain types: bounds, safety gap, corridor geometry, trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAIN_LANE = "main"


class DomainError(ValueError):
    """Raised when an input is outside the domain of an operation."""


@dataclass(frozen=True)
class ControlBounds:
    u_min: float = -3.0
    u_max: float = 3.0
    v_min: float = 0.0
    v_max: float = 20.0

    def __post_init__(self):
        if not (self.u_min < 0.0 < self.u_max):
            raise DomainError("need u_min < 0 < u_max")
        if not (0.0 <= self.v_min < self.v_max):
            raise DomainError("need 0 <= v_min < v_max")


@dataclass(frozen=True)
class SafetyGapModel:
    """Speed-dependent rear-end gap ``d0 + rho * v``."""

    standstill_gap: float = 2.0
    time_headway: float = 1.2

    def __post_init__(self):
        if self.standstill_gap < 0.0 or self.time_headway <= 0.0:
            raise DomainError("need standstill_gap >= 0 and time_headway > 0")


def gap_required(v, model: SafetyGapModel):
    """Minimum admissible spacing to the leader at follower speed ``v``."""
    arr = np.asarray(v, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError(f"negative speed {v!r}")
    out = model.standstill_gap + model.time_headway * arr
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class VehicleState:
    id: int
    position: float
    speed: float
    accel: float
    route: tuple[int, ...]
    entry_time: float

    def check(self, bounds: ControlBounds) -> None:
        if not bounds.v_min <= self.speed <= bounds.v_max:
            raise DomainError(f"vehicle {self.id}: speed {self.speed} outside bounds")
        if not bounds.u_min <= self.accel <= bounds.u_max:
            raise DomainError(f"vehicle {self.id}: accel {self.accel} outside bounds")


# --------------------------------------------------------------------------
# corridor geometry


@dataclass(frozen=True)
class Zone:
    """A conflict zone and the control zone upstream of it."""

    id: int
    name: str
    entry: float
    length: float
    control_length: float
    desired_speed: float
    conflicts: frozenset = frozenset()  # frozensets of two approach lane names
    hold_speed: bool = False  # vehicles keep desired_speed across the zone (SRZ)

    @property
    def control_start(self) -> float:
        return self.entry - self.control_length

    @property
    def exit(self) -> float:
        return self.entry + self.length

    def conflicting(self, lane_a: str, lane_b: str) -> bool:
        return frozenset((lane_a, lane_b)) in self.conflicts


@dataclass(frozen=True)
class Route:
    """Path of a vehicle class through the corridor.

    Positions are corridor coordinates. A route may start on an approach lane
    that joins the main lane at ``join_position``; ``join_position=None``
    means the approach lane never joins (the vehicle leaves at ``exit``).
    """

    name: str
    origin: float
    exit: float
    zones: tuple[int, ...]
    approach_lane: str = MAIN_LANE
    join_position: float | None = None
    approach_speed: float | None = None

    def lane_at(self, p: float) -> str:
        if self.approach_lane == MAIN_LANE:
            return MAIN_LANE
        if self.join_position is not None and p >= self.join_position:
            return MAIN_LANE
        return self.approach_lane

    @property
    def length(self) -> float:
        return self.exit - self.origin


@dataclass(frozen=True)
class CorridorLayout:
    total_length: float
    zones: tuple[Zone, ...]
    routes: tuple[Route, ...]
    # (start position, desired speed) breakpoints on the main lane
    speed_profile: tuple[tuple[float, float], ...]

    def __post_init__(self):
        entries = [z.entry for z in self.zones]
        if any(b <= a for a, b in zip(entries, entries[1:])):
            raise DomainError("zone entry positions must be strictly increasing")
        for z in self.zones:
            if not 0.0 <= z.control_start < z.entry <= self.total_length:
                raise DomainError(f"zone {z.id}: positions outside corridor")
            if z.exit > self.total_length:
                raise DomainError(f"zone {z.id}: exit beyond corridor end")
        ids = [z.id for z in self.zones]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate zone id")
        for r in self.routes:
            if any(zid not in ids for zid in r.zones):
                raise DomainError(f"route {r.name}: unknown zone")
            if not 0.0 <= r.origin < r.exit <= self.total_length:
                raise DomainError(f"route {r.name}: bad origin/exit")
        object.__setattr__(self, "_by_id", {z.id: z for z in self.zones})

    def zone(self, zid: int) -> Zone:
        return self._by_id[zid]

    def route(self, name: str) -> Route:
        for r in self.routes:
            if r.name == name:
                return r
        raise KeyError(name)

    def main_speed(self, p: float) -> float:
        speed = self.speed_profile[0][1]
        for start, s in self.speed_profile:
            if p >= start:
                speed = s
        return speed

    def desired_speed(self, route: Route, p: float) -> float:
        if route.lane_at(p) != MAIN_LANE and route.approach_speed is not None:
            return route.approach_speed
        return self.main_speed(p)

    def next_speed_change(self, route: Route, p: float) -> tuple[float, float] | None:
        """Next downstream (position, speed) breakpoint where the desired speed drops."""
        here = self.desired_speed(route, p)
        for start, s in self.speed_profile:
            if start > p and s < here:
                return start, s
        return None


def default_layout() -> CorridorLayout:
    """Merge at 400 m, 125 m speed-reduction zone at 800 m, roundabout at 1200 m."""
    cz = 150.0
    zones = (
        Zone(1, "merge", 400.0, 30.0, cz, 17.0,
             frozenset({frozenset(("main", "ramp"))})),
        Zone(2, "srz", 800.0, 125.0, cz, 8.0, hold_speed=True),
        Zone(3, "roundabout", 1200.0, 30.0, cz, 11.0,
             frozenset({frozenset(("main", "side"))})),
    )
    routes = (
        Route("main", 0.0, 1300.0, (1, 2, 3)),
        Route("ramp", 0.0, 1300.0, (1, 2, 3), approach_lane="ramp",
              join_position=400.0, approach_speed=17.0),
        Route("side", 1050.0, 1230.0, (3,), approach_lane="side",
              join_position=None, approach_speed=11.0),
    )
    profile = ((0.0, 17.0), (800.0, 8.0), (925.0, 11.0))
    return CorridorLayout(1300.0, zones, routes, profile)


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Segment:
    """One constant-jerk piece: ``u = u0 + jerk*tau`` with ``tau = t - t_start``."""

    t_start: float
    t_end: float
    p0: float
    v0: float
    u0: float
    jerk: float

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def state(self, t):
        tau = np.asarray(t, dtype=float) - self.t_start
        u = self.u0 + self.jerk * tau
        v = self.v0 + self.u0 * tau + 0.5 * self.jerk * tau**2
        p = self.p0 + self.v0 * tau + 0.5 * self.u0 * tau**2 + self.jerk * tau**3 / 6.0
        return p, v, u

    def end_state(self) -> tuple[float, float, float]:
        p, v, u = self.state(self.t_end)
        return float(p), float(v), float(u)

    def cost(self) -> float:
        """Exact value of 0.5 * integral of u^2 over the segment."""
        T = self.duration
        b, a = self.u0, self.jerk
        return 0.5 * (b * b * T + a * b * T**2 + a * a * T**3 / 3.0)


@dataclass(frozen=True)
class Trajectory:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise DomainError("empty trajectory")
        coef = np.array([(s.t_start, s.p0, s.v0, s.u0, s.jerk) for s in self.segments])
        object.__setattr__(self, "_coef", coef.T.copy())

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def joints(self) -> list[float]:
        return [s.t_start for s in self.segments[1:]]

    def cost(self) -> float:
        return sum(s.cost() for s in self.segments)

    def evaluate(self, t):
        """Position, speed and acceleration at ``t`` (scalar or array).

        Times past the last segment extrapolate the last polynomial; callers
        that want cruise after the end should use :meth:`with_cruise`.
        """
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        starts, p0, v0, u0, jerk = self._coef
        idx = np.clip(np.searchsorted(starts, t_arr, side="right") - 1, 0, len(starts) - 1)
        tau = t_arr - starts[idx]
        u0, jerk = u0[idx], jerk[idx]
        u = u0 + jerk * tau
        v = v0[idx] + u0 * tau + 0.5 * jerk * tau**2
        p = p0[idx] + v0[idx] * tau + 0.5 * u0 * tau**2 + jerk * tau**3 / 6.0
        if np.ndim(t) == 0:
            return float(p[0]), float(v[0]), float(u[0])
        return p, v, u

    def end_state(self) -> tuple[float, float, float]:
        return self.segments[-1].end_state()

    def with_cruise(self, until: float) -> "Trajectory":
        """Append a constant-speed segment lasting until time ``until``."""
        p, v, _ = self.end_state()
        if until <= self.t_end:
            return self
        return Trajectory(self.segments + (Segment(self.t_end, until, p, v, 0.0, 0.0),))

    def time_at_position(self, target: float) -> float:
        """First time the trajectory reaches ``target`` (bisection on monotone p)."""
        for s in self.segments:
            p_end = s.end_state()[0]
            if p_end >= target - 1e-12:
                lo, hi = s.t_start, s.t_end
                if float(s.state(lo)[0]) >= target:
                    return lo
                for _ in range(100):
                    mid = 0.5 * (lo + hi)
                    if float(s.state(mid)[0]) < target:
                        lo = mid
                    else:
                        hi = mid
                return 0.5 * (lo + hi)
        raise DomainError(f"trajectory never reaches {target}")

    def shifted(self, dt: float) -> "Trajectory":
        return Trajectory(tuple(
            Segment(s.t_start + dt, s.t_end + dt, s.p0, s.v0, s.u0, s.jerk)
            for s in self.segments))

    def joint_mismatch(self) -> tuple[float, float]:
        """Largest position and speed discontinuities over all joints."""
        dp = dv = 0.0
        for a, b in zip(self.segments, self.segments[1:]):
            pa, va, _ = a.end_state()
            dp = max(dp, abs(pa - b.p0))
            dv = max(dv, abs(va - b.v0))
        return dp, dv


def cruise(t0: float, t1: float, p0: float, v: float) -> Trajectory:
    return Trajectory((Segment(t0, t1, p0, v, 0.0, 0.0),))


# --------------------------------------------------------------------------
# rear-end safety


@dataclass
class SafetyReport:
    violations: list[tuple[float, float, float]] = field(default_factory=list)
    comparable: bool = True

    @property
    def safe(self) -> bool:
        return self.comparable and not self.violations

    @property
    def first_violation(self) -> float | None:
        return self.violations[0][0] if self.violations else None


def check_rear_end_safety(leader: Trajectory, follower: Trajectory, model: SafetyGapModel,
                          dt: float = 0.1, eps: float = 1e-6,
                          window: tuple[float, float] | None = None) -> SafetyReport:
    """Sample the spacing over the common time window and list gap shortfalls.

    Each violation is ``(t, spacing, required)``. Sampling is anchored at the
    window start so the result is invariant under a common time shift.
    """
    lo = max(leader.t_start, follower.t_start)
    hi = min(leader.t_end, follower.t_end)
    if window is not None:
        lo, hi = max(lo, window[0]), min(hi, window[1])
    if hi < lo:
        return SafetyReport(comparable=False)
    n = int(math.floor((hi - lo) / dt + 1e-9))
    t = lo + dt * np.arange(n + 1)
    if t[-1] < hi - 1e-12:
        t = np.append(t, hi)
    pk, _, _ = leader.evaluate(t)
    pi, vi, _ = follower.evaluate(t)
    spacing = pk - pi
    need = model.standstill_gap + model.time_headway * np.maximum(vi, 0.0)
    bad = np.nonzero(spacing < need - eps)[0]
    return SafetyReport([(float(t[j]), float(spacing[j]), float(need[j])) for j in bad])


def spacing_shortfall(leader_p: Sequence[float], follower_p: Sequence[float],
                      follower_v: Sequence[float], model: SafetyGapModel,
                      eps: float = 1e-6) -> np.ndarray:
    """Indices where sampled spacing undercuts the required gap."""
    s = np.asarray(leader_p) - np.asarray(follower_p)
    need = model.standstill_gap + model.time_headway * np.maximum(np.asarray(follower_v), 0.0)
    return np.nonzero(s < need - eps)[0]

