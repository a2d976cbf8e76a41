"""Conflict-zone coordination: identity assignment, slot scheduling, and plan admission.

Two schemes are provided. In isolated mode a vehicle is scheduled for one
zone when it enters that zone's control area and receives a free-terminal-speed
plan up to the zone entry. In corridor mode every zone on the route is
scheduled at corridor entry and the vehicle follows one chained plan to its exit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import (MAIN_LANE, ControlBounds, CorridorLayout, DomainError, Route, SafetyGapModel,
                    Trajectory, Zone, check_rear_end_safety, gap_required)
from .ocp import (BoundaryConditions, SchedulingError, chain_waypoints, check_feasibility,
                  solve)

log = logging.getLogger(__name__)

ISOLATED = "isolated"
CORRIDOR = "corridor"


@dataclass(frozen=True)
class CoordinationParams:
    h_lat: float = 1.5  # s, entries from conflicting approaches
    h_rear: float | None = None  # s, same downstream lane; None derives it from the gap model
    h_margin: float = 0.2  # s added to the derived rear headway
    slot_step: float = 0.5
    max_retries: int = 20
    min_plan_speed: float = 1.0  # planned speeds below this count as a failed attempt
    safety_dt: float = 0.1
    check_depth: int = 3  # predecessors per lane checked for rear-end safety
    terminal_decel: float = 2.0  # m/s^2, braking assumed after an isolated plan ends

    def __post_init__(self):
        if self.h_lat <= 0.0 or self.slot_step <= 0.0 or self.max_retries < 0:
            raise DomainError("bad coordination parameters")
        if self.h_margin < 0.0 or (self.h_rear is not None and self.h_rear <= 0.0):
            raise DomainError("h_rear must be positive")
        if self.terminal_decel <= 0.0:
            raise DomainError("terminal_decel must be positive")


def rear_headway(zone: Zone, gap_model: SafetyGapModel, params: CoordinationParams) -> float:
    """Entry-time headway that leaves the speed-dependent gap at the zone's desired speed."""
    if params.h_rear is not None:
        return params.h_rear
    return gap_model.time_headway + gap_model.standstill_gap / zone.desired_speed + params.h_margin


@dataclass(frozen=True)
class Reservation:
    vid: int
    time: float
    approach: str
    downstream: str


@dataclass
class ZoneQueue:
    """Reservations of one zone, kept in crossing-time order."""

    zone: Zone
    entries: list[Reservation] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return [r.vid for r in self.entries]

    @property
    def times(self) -> list[float]:
        return [r.time for r in self.entries]

    def last(self) -> Reservation | None:
        return self.entries[-1] if self.entries else None

    def insert(self, res: Reservation) -> None:
        if any(r.vid == res.vid for r in self.entries):
            raise SchedulingError(f"vehicle {res.vid} already queued at zone {self.zone.id}")
        k = len(self.entries)
        while k > 0 and self.entries[k - 1].time > res.time:
            k -= 1
        self.entries.insert(k, res)

    def prune(self, before: float) -> None:
        """Drop reservations that no future request can conflict with."""
        self.entries = [r for r in self.entries if r.time >= before]


def separation(zone: Zone, a: Reservation, approach: str, gap_model: SafetyGapModel,
               params: CoordinationParams) -> float:
    if zone.conflicting(a.approach, approach):
        return params.h_lat
    return rear_headway(zone, gap_model, params)


def earliest_slot(queue: ZoneQueue, t_lb: float, approach: str, downstream: str,
                  gap_model: SafetyGapModel, params: CoordinationParams) -> float:
    """Earliest crossing time not before ``t_lb`` that respects every reservation.

    Vehicles continuing on the same lane keep their order, so the new one goes
    behind all of them. A conflicting reservation on another downstream lane
    only needs ``h_lat`` on either side, which lets the vehicle use a gap.
    """
    zone = queue.zone
    t = t_lb
    others = []
    for r in queue.entries:
        if r.downstream == downstream:
            t = max(t, r.time + separation(zone, r, approach, gap_model, params))
        elif zone.conflicting(r.approach, approach):
            others.append(r.time)
    for r in sorted(others):
        if abs(t - r) < params.h_lat:
            t = r + params.h_lat
    return t


def schedule_isolated(queue: ZoneQueue, t0: float, p0: float, approach: str,
                      gap_model: SafetyGapModel = SafetyGapModel(),
                      params: CoordinationParams = CoordinationParams(),
                      downstream: str | None = None, v0: float | None = None) -> float:
    """Free-flow arrival at the zone entry, pushed behind the queue's last reservation.

    Without ``v0`` the control zone is covered at the zone's desired speed;
    with it, at the mean of ``v0`` and that speed (a linear speed transition).
    """
    zone = queue.zone
    if p0 >= zone.entry:
        raise DomainError("vehicle is already past the zone entry")
    d = zone.entry - p0
    if v0 is None:
        t = t0 + d / zone.desired_speed
    else:
        t = t0 + 2.0 * d / (max(v0, 0.0) + zone.desired_speed)
    last = queue.last()
    if last is not None:
        t = max(t, last.time + separation(zone, last, approach, gap_model, params))
    return t


@dataclass
class CrossingSchedule:
    """Assigned zone times per vehicle."""

    times: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    final: dict[int, float] = field(default_factory=dict)

    def add(self, vid: int, zone_id: int, t: float) -> None:
        row = self.times.setdefault(vid, [])
        if row and t <= row[-1][1]:
            raise SchedulingError(f"vehicle {vid}: zone times must increase along the route")
        row.append((zone_id, t))

    def finish(self, vid: int, t_final: float) -> None:
        self.final[vid] = t_final

    def zone_time(self, vid: int, zone_id: int) -> float | None:
        for z, t in self.times.get(vid, ()):
            if z == zone_id:
                return t
        return None

    def rows(self) -> list[tuple[int, int, float]]:
        return [(vid, z, t) for vid in sorted(self.times) for z, t in self.times[vid]]

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle", "zone", "time"])
            for vid, z, t in self.rows():
                w.writerow([vid, z, f"{t:.6f}"])
        return path


def separation_violations(layout: CorridorLayout, history: dict[int, list[Reservation]],
                          gap_model: SafetyGapModel, params: CoordinationParams,
                          tol: float = 1e-9) -> list[tuple[int, int, int, float]]:
    """Exhaustive pairwise check of every zone's reservation history.

    Returns ``(zone, vid_a, vid_b, dt)`` for conflicting approaches closer than
    ``h_lat`` and for same-lane consecutive entries closer than the rear headway.
    """
    out = []
    for zone in layout.zones:
        res = sorted(history.get(zone.id, []), key=lambda r: (r.time, r.vid))
        if len(res) < 2:
            continue
        t = np.array([r.time for r in res])
        for i, a in enumerate(res):
            # conflicting approaches, any pair
            for j in range(i + 1, len(res)):
                if t[j] - t[i] >= params.h_lat - tol:
                    break
                b = res[j]
                if zone.conflicting(a.approach, b.approach):
                    out.append((zone.id, a.vid, b.vid, float(t[j] - t[i])))
            # same downstream lane, consecutive
            for j in range(i + 1, len(res)):
                b = res[j]
                if b.downstream != a.downstream:
                    continue
                need = separation(zone, a, b.approach, gap_model, params)
                if t[j] - t[i] < need - tol and not zone.conflicting(a.approach, b.approach):
                    out.append((zone.id, a.vid, b.vid, float(t[j] - t[i])))
                break
    return out


def order_arrivals(events: Iterable[tuple[float, str, int]], lane_rank: dict[str, int]):
    """Deterministic processing order for arrivals: time, then lane rank, then stream order."""
    return sorted(events, key=lambda e: (e[0], lane_rank[e[1]], e[2]))


# --------------------------------------------------------------------------
# plan vetting


@dataclass(frozen=True)
class Prediction:
    """Trajectory a planner must stay behind, checked from ``t_from`` on."""

    vid: int
    trajectory: Trajectory
    t_from: float
    t_to: float = float("inf")


@dataclass
class Attempt:
    plan: Trajectory
    times: list[float]
    problem: str | None = None
    bad_zone: int | None = None  # index into the route's zone list
    hard: bool = False  # failure of bounds or safety rather than the speed floor


def _vet_segments(plan: Trajectory, bounds: ControlBounds, floor: float,
                  seg_zone: Sequence[int]) -> tuple[str | None, int | None, bool]:
    for k, seg in enumerate(plan.segments):
        f = check_feasibility(seg, bounds)
        if f.violations:
            return f"segment {k}: {', '.join(f.violations)}", seg_zone[k], True
        if f.v_range[0] < floor - 1e-9:
            return f"segment {k}: speed dips to {f.v_range[0]:.3f} m/s", seg_zone[k], False
    return None, None, False


def _vet_safety(plan: Trajectory, leaders: Sequence[Prediction], gap_model: SafetyGapModel,
                dt: float) -> tuple[str | None, float | None]:
    for pred in leaders:
        lo = max(pred.t_from, plan.t_start)
        hi = min(pred.t_to, plan.t_end, pred.trajectory.t_end)
        if hi < lo:
            continue
        rep = check_rear_end_safety(pred.trajectory, plan, gap_model, dt, window=(lo, hi))
        if rep.violations:
            return f"rear-end gap to {pred.vid} violated at t={rep.first_violation:.2f}", rep.first_violation
    return None, None


def _vet_terminal(plan: Trajectory, leaders: Sequence[Prediction], gap_model: SafetyGapModel,
                  decel: float) -> str | None:
    """Spacing at plan end must cover the gap plus the braking needed to match the leader."""
    t_end = plan.t_end
    p_f, v_f, _ = plan.end_state()
    for pred in leaders:
        if not pred.t_from <= t_end <= min(pred.t_to, pred.trajectory.t_end):
            continue
        p_l, v_l, _ = pred.trajectory.evaluate(t_end)
        need = gap_required(v_f, gap_model) + max(0.0, v_f * v_f - v_l * v_l) / (2.0 * decel)
        if p_l - p_f < need - 1e-9:
            return f"terminal gap to {pred.vid} is {p_l - p_f:.2f} m, needs {need:.2f} m"
    return None


class Coordinator:
    """Identity registry plus the per-zone queues shared by all vehicles."""

    def __init__(self, layout: CorridorLayout, mode: str = CORRIDOR,
                 params: CoordinationParams = CoordinationParams(),
                 bounds: ControlBounds = ControlBounds(),
                 gap_model: SafetyGapModel = SafetyGapModel()):
        if mode not in (ISOLATED, CORRIDOR):
            raise DomainError(f"unknown coordination mode {mode!r}")
        self.layout = layout
        self.mode = mode
        self.params = params
        self.bounds = bounds
        self.gap_model = gap_model
        self.queues = {z.id: ZoneQueue(z) for z in layout.zones}
        self.history: dict[int, list[Reservation]] = {z.id: [] for z in layout.zones}
        self.schedule = CrossingSchedule()
        self.routes: dict[int, str] = {}
        self.plans: dict[int, Trajectory] = {}
        self.flags: dict[int, str] = {}
        self._keys: set = set()
        self._next_id = 1
        # corridor mode: scheduling order of vehicles per lane, for safety checks
        self._lane_order: dict[str, list[int]] = {}
        self._windows: dict[int, dict[str, tuple[float, float]]] = {}

    # ---------------------------------------------------------------- identity

    def assign_identity(self, key, route: str) -> int:
        """Fresh id for an arrival event ``key``; registering the same key twice is an error."""
        if key in self._keys:
            raise SchedulingError(f"arrival {key!r} already registered")
        self._keys.add(key)
        vid = self._next_id
        self._next_id += 1
        self.routes[vid] = route
        return vid

    # ---------------------------------------------------------------- helpers

    def _lanes(self, route: Route, zone: Zone) -> tuple[str, str]:
        return route.lane_at(zone.entry - 1e-6), route.lane_at(zone.entry)

    def _reserve(self, vid: int, zone: Zone, t: float, approach: str, downstream: str) -> None:
        res = Reservation(vid, t, approach, downstream)
        self.queues[zone.id].insert(res)
        self.history[zone.id].append(res)
        self.schedule.add(vid, zone.id, t)

    def prune(self, t_now: float) -> None:
        horizon = t_now - 2.0 * max(self.params.h_lat, 5.0)
        for q in self.queues.values():
            q.prune(horizon)

    # ---------------------------------------------------------------- isolated

    def admit_isolated(self, vid: int, route: Route, zone: Zone, t0: float, p0: float,
                       v0: float, leaders: Sequence[Prediction] = ()) -> tuple[Trajectory, float]:
        """Schedule one zone and return the plan to its entry.

        The terminal speed is free, except at hold-speed zones where the plan
        meets the zone speed.

        Failed attempts move the slot later by ``slot_step``. If every attempt
        fails, the first attempt meeting bounds and safety is kept (or the last
        one) and the vehicle is flagged.
        """
        approach, downstream = self._lanes(route, zone)
        queue = self.queues[zone.id]
        base = schedule_isolated(queue, t0, p0, approach, self.gap_model, self.params, v0=v0)
        vf = zone.desired_speed if zone.hold_speed else None
        fallback = None
        attempt = None
        for k in range(self.params.max_retries + 1):
            tf = base + k * self.params.slot_step
            sol = solve(BoundaryConditions(t0, tf, p0, zone.entry, v0, vf))
            plan = sol.trajectory
            problem, _, hard = _vet_segments(plan, self.bounds, self.params.min_plan_speed, [0])
            if problem is None:
                problem, _ = _vet_safety(plan, leaders, self.gap_model, self.params.safety_dt)
                if problem is None:
                    problem = _vet_terminal(plan, leaders, self.gap_model, self.params.terminal_decel)
                hard = problem is not None
            attempt = (plan, tf, problem)
            if problem is None:
                break
            if not hard and fallback is None:
                fallback = attempt
        else:
            if fallback is not None:
                attempt = fallback
            self.flags[vid] = f"zone {zone.id}: {attempt[2]}"
            log.warning("vehicle %d accepted best-effort plan at zone %d (%s)", vid, zone.id, attempt[2])
        plan, tf, _ = attempt
        self._reserve(vid, zone, tf, approach, downstream)
        self.plans[vid] = plan
        return plan, tf

    # ---------------------------------------------------------------- corridor

    def _corridor_attempt(self, route: Route, t0: float, p0: float, v0: float,
                          bumps: list[float]) -> Attempt:
        """Forward slot search, then one chained plan through every zone entry.

        Entry speeds are left to the optimiser except at hold-speed zones and at
        the last zone, from which the plan cruises to the route exit.
        """
        vmax = self.bounds.v_max
        waypoints = []
        seg_zone = []
        times = []
        p, t, v = p0, t0, v0
        last = len(route.zones) - 1
        for k, zid in enumerate(route.zones):
            zone = self.layout.zone(zid)
            if zone.entry <= p:
                raise SchedulingError(f"route {route.name} starts past zone {zid}")
            d = zone.entry - p
            vz = zone.desired_speed
            nominal = t + max(2.0 * d / (v + vz), d / vmax)
            approach, downstream = self._lanes(route, zone)
            tz = earliest_slot(self.queues[zid], nominal + bumps[k], approach, downstream,
                               self.gap_model, self.params)
            fixed = zone.hold_speed or k == last
            waypoints.append((zone.entry, tz, vz if fixed else None))
            seg_zone.append(k)
            times.append(tz)
            p, t, v = zone.entry, tz, vz
            if zone.hold_speed:
                t = tz + zone.length / vz
                p = zone.exit
                waypoints.append((p, t, vz))
                seg_zone.append(k)
        plan = chain_waypoints(p0, v0, t0, waypoints)
        if route.exit > p:
            plan = plan.with_cruise(t + (route.exit - p) / v)
            seg_zone.append(last)
        att = Attempt(plan, times)
        att.problem, att.bad_zone, att.hard = _vet_segments(
            plan, self.bounds, self.params.min_plan_speed, seg_zone)
        return att

    def _vet_corridor(self, route: Route, att: Attempt) -> Attempt:
        if att.problem is None:
            windows = self.lane_windows(route, att.plan, att.times)
            problem, t_bad = _vet_safety(att.plan, self._corridor_leaders(windows),
                                         self.gap_model, self.params.safety_dt)
            if problem is not None:
                att.problem, att.hard = problem, True
                att.bad_zone = self._zone_index_at(route, att, t_bad)
        return att

    def lane_windows(self, route: Route, plan: Trajectory,
                     times: Sequence[float] = ()) -> dict[str, tuple[float, float]]:
        """Time window the planned vehicle spends on each lane.

        ``times`` are the scheduled zone times; when the join point is a zone
        entry its time is taken from there instead of searching the plan.
        """
        if route.approach_lane == MAIN_LANE or route.join_position is None:
            return {route.lane_at(route.origin): (plan.t_start, plan.t_end)}
        t_join = None
        for zid, tz in zip(route.zones, times):
            if abs(self.layout.zone(zid).entry - route.join_position) < 1e-9:
                t_join = tz
        if t_join is None:
            t_join = plan.time_at_position(route.join_position)
        return {route.approach_lane: (plan.t_start, t_join), MAIN_LANE: (t_join, plan.t_end)}

    def _corridor_leaders(self, windows: dict[str, tuple[float, float]]) -> list[Prediction]:
        out = []
        seen = set()
        for lane, (lo, hi) in windows.items():
            for vid in reversed(self._lane_order.get(lane, [])[-self.params.check_depth:]):
                if (vid, lane) in seen or vid not in self.plans:
                    continue
                seen.add((vid, lane))
                other = self._windows[vid].get(lane)
                if other is None:
                    continue
                out.append(Prediction(vid, self.plans[vid], max(lo, other[0]), min(hi, other[1])))
        return out

    def plan_corridor(self, vid: int, route: Route, t0: float, p0: float, v0: float) -> Attempt:
        """Slot search over all zones of the route without committing anything."""
        bumps = [0.0] * len(route.zones)
        att = None
        for _ in range(self.params.max_retries + 1):
            att = self._corridor_attempt(route, t0, p0, v0, bumps)
            att = self._vet_corridor(route, att)
            if att.problem is None:
                return att
            if not att.hard:
                # a speed dip is not cured by delaying further; the caller retries entry later
                return att
            bumps[att.bad_zone] += self.params.slot_step
        return att

    @staticmethod
    def _zone_index_at(route: Route, att: Attempt, t: float) -> int:
        for k, tz in enumerate(att.times):
            if t <= tz:
                return k
        return len(att.times) - 1

    def admit_corridor(self, vid: int, route: Route, t0: float, p0: float,
                       v0: float) -> Trajectory | None:
        """Plan and commit a whole-route schedule; ``None`` means retry entry later."""
        att = self.plan_corridor(vid, route, t0, p0, v0)
        if att.problem is not None:
            log.debug("vehicle %d entry deferred: %s", vid, att.problem)
            return None
        for zid, tz in zip(route.zones, att.times):
            zone = self.layout.zone(zid)
            approach, downstream = self._lanes(route, zone)
            self._reserve(vid, zone, tz, approach, downstream)
        self.schedule.finish(vid, att.plan.t_end)
        self.plans[vid] = att.plan
        self._windows[vid] = self.lane_windows(route, att.plan, att.times)
        for lane in self._windows[vid]:
            self._lane_order.setdefault(lane, []).append(vid)
        return att.plan

    def release(self, vid: int) -> None:
        """Forget the plan of a vehicle that has left the corridor."""
        self.plans.pop(vid, None)
        self._windows.pop(vid, None)

    def violations(self) -> list[tuple[int, int, int, float]]:
        return separation_violations(self.layout, self.history, self.gap_model, self.params)


def plan_vehicle(coordinator: Coordinator, vid: int, route: Route, t0: float, p0: float,
                 v0: float, zone: Zone | None = None,
                 leaders: Sequence[Prediction] = ()) -> Trajectory | None:
    """Mode-dependent planning entry point used by the simulator."""
    if coordinator.mode == CORRIDOR:
        return coordinator.admit_corridor(vid, route, t0, p0, v0)
    if zone is None:
        raise DomainError("isolated planning needs a zone")
    return coordinator.admit_isolated(vid, route, zone, t0, p0, v0, leaders)[0]
