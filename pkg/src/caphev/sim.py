"""Fixed-step corridor simulation, metrics, run comparison and output files."""

from __future__ import annotations

import csv
import json
import logging
import math
from bisect import bisect_right
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baseline as bl
from .config import ScenarioConfig, config_to_dict, layout_to_dict
from .coordination import (CORRIDOR, ISOLATED, Coordinator, Prediction, order_arrivals)
from .model import MAIN_LANE, Route, Trajectory, Zone, cruise
from .powertrain import (EnergyLedger, PowertrainError, baseline_policy_array, cached_table,
                         online_policy_array, powertrain_states, stage_increments,
                         torque_demand, accumulate)

log = logging.getLogger(__name__)

STOP_SPEED = 0.5  # m/s
STOP_DURATION = 1.0  # s
GAP_EPS = 1e-6  # m
SUMMARY_VERSION = 1


class SafetyViolation(RuntimeError):
    """Rear-end gap violated in a coordinated scenario; always a bug, never a statistic."""


@dataclass(eq=False)
class Vehicle:
    vid: int
    route: Route
    t_arrival: float
    t_spawn: float
    p: float
    v: float
    # sampled plan: state at step k is arrays[k - k0] while k <= plan_last
    plan: Trajectory | None = None
    plan_k0: int = 0
    plan_last: int = -1
    plan_p: np.ndarray | None = None
    plan_v: np.ndarray | None = None
    plan_u: np.ndarray | None = None
    next_zone: int = 0
    committed: set = field(default_factory=set)
    ts: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    vs: list = field(default_factory=list)
    us: list = field(default_factory=list)
    plan_log: list = field(default_factory=list)  # (k0, last step, plan) per attached plan
    zone_entry: dict = field(default_factory=dict)
    t_exit: float | None = None

    def planned(self, k: int) -> bool:
        return self.plan is not None and self.plan_k0 <= k <= self.plan_last

    def lane(self) -> str:
        return self.route.lane_at(self.p)


def sample_plan(plan: Trajectory, k0: int, dt: float, plan_end: float):
    """Plan samples on the global grid from step ``k0`` one step past ``plan_end``."""
    last = k0 + max(int(math.ceil(plan_end / dt - 1e-9)) - 1 - k0, 0)
    t = dt * np.arange(k0, last + 2)
    p, v, u = plan.with_cruise(t[-1] + dt).evaluate(t)
    return last, p, np.maximum(v, 0.0), u


# --------------------------------------------------------------------------
# results


@dataclass
class StopEvent:
    vid: int
    t_start: float
    duration: float
    position: float
    in_control_zone: bool


@dataclass
class VehicleMetrics:
    vid: int
    route: str
    t_arrival: float
    t_spawn: float
    t_exit: float
    entry_delay: float
    travel_time: float
    distance_km: float
    stops: int
    stops_in_control: int
    effort: float  # 0.5 * integral of u^2
    fuel_g: float
    battery_wh: float
    equivalent_fuel_g: float
    fuel_g_per_km: float
    battery_wh_per_km: float
    economy: float  # km per kg of equivalent fuel
    average_cost: float


@dataclass
class MetricsReport:
    config: dict
    vehicles: list[VehicleMetrics]
    fleet: dict
    safety: dict
    stops: dict
    energy: dict
    flags: dict

    def to_dict(self) -> dict:
        return {
            "version": SUMMARY_VERSION,
            "config": self.config,
            "fleet": self.fleet,
            "safety": self.safety,
            "stops": self.stops,
            "energy": self.energy,
            "flags": {str(k): v for k, v in sorted(self.flags.items())},
            "vehicles": [asdict(m) for m in self.vehicles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False)

    @property
    def invariant_failures(self) -> list[str]:
        out = []
        if self.safety["collisions"]:
            out.append(f"{self.safety['collisions']} collisions")
        cav = self.config["scenario"] != "baseline"
        if cav and self.safety["rear_end_violations"]:
            out.append(f"{self.safety['rear_end_violations']} rear-end gap violations")
        if cav and self.safety["separation_violations"]:
            out.append(f"{self.safety['separation_violations']} conflict-zone separation violations")
        if cav and self.safety["entry_time_mismatch"]:
            out.append(f"{self.safety['entry_time_mismatch']} zone entries off schedule")
        if self.energy["audit_residual"] > 1e-6:
            out.append(f"energy audit residual {self.energy['audit_residual']:.3g}")
        if self.energy["position_drift"] > 1e-6:
            out.append(f"position drift {self.energy['position_drift']:.3g}")
        return out


@dataclass
class SimResult:
    report: MetricsReport
    vehicles: list[Vehicle]
    coordinator: Coordinator
    powertrain_logs: dict[int, dict[str, np.ndarray]]
    stop_events: list[StopEvent]


# --------------------------------------------------------------------------
# engine


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.layout = cfg.layout
        mode = CORRIDOR if cfg.scenario == CORRIDOR else ISOLATED
        self.coord = Coordinator(cfg.layout, mode, cfg.coordination, cfg.bounds, cfg.safety)
        self.active: list[Vehicle] = []
        self.done: list[Vehicle] = []
        self.violations: list[tuple[float, int, int, float, float]] = []
        self.collisions = 0
        self.arrivals = self._arrivals()
        self.next_try: dict[str, float] = {}
        self.table = cached_table(pt=cfg.powertrain) if cfg.powertrain_policy == "pareto" else None

    @property
    def cav(self) -> bool:
        return self.cfg.scenario != "baseline"

    def _arrivals(self) -> dict[str, deque]:
        cfg = self.cfg
        out = {}
        for i, route in enumerate(cfg.layout.routes):
            rate = cfg.rate * cfg.route_shares.get(route.name, 0.0) / 3600.0
            rng = np.random.default_rng([cfg.seed, i])
            times = []
            t = 0.0
            while rate > 0.0:
                t += rng.exponential(1.0 / rate)
                if t >= cfg.duration:
                    break
                times.append(t)
            out[route.name] = deque((t, route.name, j) for j, t in enumerate(times))
        return out

    # ---------------------------------------------------------------- lanes

    def _lanes(self) -> dict[str, list[Vehicle]]:
        lanes: dict[str, list[Vehicle]] = {}
        for veh in self.active:
            lanes.setdefault(veh.lane(), []).append(veh)
        for lst in lanes.values():
            lst.sort(key=lambda x: x.p)
        return lanes

    def _leader(self, veh: Vehicle, lanes) -> Vehicle | None:
        lane = veh.lane()
        lst = lanes[lane]
        i = lst.index(veh)
        if i + 1 < len(lst):
            return lst[i + 1]
        r = veh.route
        if lane != MAIN_LANE and r.join_position is not None:
            main = lanes.get(MAIN_LANE, [])
            pos = [x.p for x in main]
            j = bisect_right(pos, r.join_position - 1e-9)
            if j < len(main):
                return main[j]
        return None

    def _monitor(self, t: float, lanes) -> None:
        for lst in lanes.values():
            if len(lst) < 2:
                continue
            p = np.array([x.p for x in lst])
            v = np.array([x.v for x in lst])
            s = p[1:] - p[:-1]
            need = self.cfg.safety.standstill_gap + self.cfg.safety.time_headway * v[:-1]
            for j in np.nonzero(s < need - GAP_EPS)[0]:
                lead, foll = lst[j + 1], lst[j]
                self.violations.append((t, lead.vid, foll.vid, float(s[j]), float(need[j])))
                if s[j] <= 0.0:
                    self.collisions += 1
                if self.cav and self.cfg.strict:
                    raise SafetyViolation(
                        f"t={t:.2f}: vehicle {foll.vid} is {s[j]:.3f} m behind {lead.vid}, "
                        f"needs {need[j]:.3f} m ({self.cfg.scenario}, seed {self.cfg.seed})")

    # ---------------------------------------------------------------- spawning

    def _spawn_gap_ok(self, route: Route, v_s: float) -> bool:
        lane = route.lane_at(route.origin)
        ahead = [x for x in self.active if x.lane() == lane and x.p >= route.origin]
        if not ahead:
            return True
        lead = min(ahead, key=lambda x: x.p)
        gap = lead.p - route.origin
        b = self.cfg.driver.comfortable_decel
        need = (self.cfg.safety.standstill_gap + self.cfg.driver.time_headway * v_s
                + max(0.0, v_s * v_s - lead.v * lead.v) / (2.0 * b))
        return gap >= need

    def _spawn(self, k: int, t: float) -> None:
        heads = [q[0] for q in self.arrivals.values() if q and q[0][0] <= t + 1e-9]
        for t_arr, name, seq in order_arrivals(heads, self.lane_rank_by_route):
            route = self.layout.route(name)
            if self.next_try.get(name, -1.0) > t + 1e-9:
                continue
            v_s = self.layout.desired_speed(route, route.origin)
            if self.coord.mode == CORRIDOR:
                vid = self.coord._next_id
                plan = self.coord.admit_corridor(vid, route, t, route.origin, v_s)
                if plan is None:
                    self.next_try[name] = t + self.cfg.entry_retry
                    continue
                self.coord.assign_identity((name, seq), name)
                veh = Vehicle(vid, route, t_arr, t, route.origin, v_s)
                self._attach(veh, plan, k, plan.t_end)
            else:
                if not self._spawn_gap_ok(route, v_s):
                    continue
                vid = self.coord.assign_identity((name, seq), name)
                veh = Vehicle(vid, route, t_arr, t, route.origin, v_s)
            self.arrivals[name].popleft()
            self.active.append(veh)

    @property
    def lane_rank_by_route(self) -> dict[str, int]:
        return {r.name: i for i, r in enumerate(self.layout.routes)}

    def _attach(self, veh: Vehicle, plan: Trajectory, k: int, plan_end: float) -> None:
        veh.plan = plan
        veh.plan_k0 = k
        veh.plan_last, veh.plan_p, veh.plan_v, veh.plan_u = sample_plan(plan, k, self.cfg.dt, plan_end)
        veh.plan_log.append((k, veh.plan_last, plan))

    # ---------------------------------------------------------------- isolated planning

    def _predict(self, other: Vehicle, k: int, t: float) -> Trajectory:
        horizon = t + 120.0
        if other.planned(k):
            end = other.plan.t_end
            return other.plan.with_cruise(max(horizon, end + 1.0))
        return cruise(t, horizon, other.p, other.v)

    def _plan_isolated(self, k: int, t: float, lanes) -> None:
        due = []
        for veh in self.active:
            if veh.planned(k) or veh.next_zone >= len(veh.route.zones):
                continue
            zone = self.layout.zone(veh.route.zones[veh.next_zone])
            if veh.p >= zone.control_start:
                due.append((veh, zone))
        for veh, zone in sorted(due, key=lambda e: -e[0].p):
            veh.next_zone += 1
            if zone.entry - veh.p < 0.5:
                self.coord.flags[veh.vid] = f"zone {zone.id}: reached control zone too late to plan"
                continue
            leaders = []
            lead = self._leader(veh, lanes)
            if lead is not None:
                leaders.append(Prediction(lead.vid, self._predict(lead, k, t), t))
            last = self.coord.queues[zone.id].last()
            if last is not None and (lead is None or last.vid != lead.vid):
                pred = next((x for x in self.active if x.vid == last.vid), None)
                approach = veh.route.lane_at(zone.entry - 1e-6)
                if pred is not None and last.downstream == veh.route.lane_at(zone.entry):
                    t_from = t if approach == last.approach else last.time
                    leaders.append(Prediction(pred.vid, self._predict(pred, k, t), t_from))
            plan, tf = self.coord.admit_isolated(veh.vid, veh.route, zone, t, veh.p, veh.v, leaders)
            self._attach(veh, plan, k, tf)

    # ---------------------------------------------------------------- baseline yielding

    def _stop_line(self, veh: Vehicle, lanes, t: float) -> float | None:
        """Gap to a stop line the vehicle must treat as a standing leader, if any."""
        cfg = self.cfg
        rule = cfg.yield_rule
        gap = None
        for zid in veh.route.zones:
            if zid in veh.committed or zid not in cfg.priority:
                continue
            zone = self.layout.zone(zid)
            approach = veh.route.lane_at(zone.entry - 1e-6)
            major = cfg.priority[zid]
            if approach == major or not zone.conflicting(approach, major):
                continue
            dist = zone.entry - veh.p
            if dist <= 0.0:
                veh.committed.add(zid)
                continue
            if dist > rule.lookahead:
                continue
            v_des = self.layout.desired_speed(veh.route, veh.p)
            own = arrival_time(dist, veh.v, v_des, cfg.driver.max_accel)
            others = []
            for x in lanes.get(major, []):
                if zid not in x.route.zones or x.route.lane_at(zone.entry - 1e-6) != major:
                    continue
                d = zone.entry - x.p
                if -zone.length <= d <= 10.0 * rule.lookahead:
                    others.append(d / max(x.v, 0.1))
            decision = bl.yield_decision(own, others, rule)
            brake = veh.v * veh.v / (2.0 * cfg.driver.comfortable_decel) + cfg.driver.min_gap + 1.0
            if decision == bl.GO:
                if dist <= brake or veh.v < 0.1:
                    veh.committed.add(zid)
                continue
            gap = dist if gap is None else min(gap, dist)
        sig = cfg.signal
        if sig is not None and veh.lane() == MAIN_LANE:
            dist = sig.position - veh.p
            if 0.0 < dist <= rule.lookahead and bl.signal_phase(t, sig.plan) == bl.RED:
                if dist >= veh.v * veh.v / (2.0 * cfg.driver.comfortable_decel):
                    gap = dist if gap is None else min(gap, dist)
        return gap

    # ---------------------------------------------------------------- stepping

    def _idm(self, veh: Vehicle, lanes, t: float) -> float:
        cfg = self.cfg
        desired = self.layout.desired_speed(veh.route, veh.p)
        change = self.layout.next_speed_change(veh.route, veh.p)
        desired = bl.anticipated_speed(desired, change, veh.p, cfg.driver)
        brake = bl.approach_decel(veh.v, change, veh.p, cfg.driver)
        lead = self._leader(veh, lanes)
        gap = lead_v = None
        if lead is not None:
            gap, lead_v = lead.p - veh.p, lead.v
        if not self.cav:
            line = self._stop_line(veh, lanes, t)
            if line is not None and (gap is None or line < gap):
                gap, lead_v = line, 0.0
        u = bl.follow_accel(veh.v, desired, gap, lead_v, cfg.driver, cfg.bounds)
        return u if brake is None else max(min(u, brake), cfg.bounds.u_min)

    def run(self) -> SimResult:
        cfg = self.cfg
        dt = cfg.dt
        n = int(round(cfg.duration / dt))
        entries = {r.name: [(zid, self.layout.zone(zid).entry) for zid in r.zones]
                   for r in self.layout.routes}
        for k in range(n + 1):
            t = k * dt
            self._spawn(k, t)
            if not self.active:
                continue
            lanes = self._lanes()
            self._monitor(t, lanes)
            if self.coord.mode == ISOLATED and self.cav:
                self._plan_isolated(k, t, lanes)
            controls = {}
            for veh in self.active:
                if veh.planned(k):
                    controls[veh.vid] = float(veh.plan_u[k - veh.plan_k0])
                else:
                    controls[veh.vid] = self._idm(veh, lanes, t)
            still = []
            for veh in self.active:
                u = controls[veh.vid]
                if veh.p >= veh.route.exit - 1e-9:
                    self._log(veh, t, 0.0)
                    self._finish(veh, t)
                    continue
                if k == n:
                    self._log(veh, t, u)
                    still.append(veh)
                    continue
                if veh.planned(k):
                    j = k + 1 - veh.plan_k0
                    p_new, v_new = float(veh.plan_p[j]), float(veh.plan_v[j])
                else:
                    v_new = max(veh.v + u * dt, 0.0)
                    u = (v_new - veh.v) / dt
                    p_new = veh.p + 0.5 * (veh.v + v_new) * dt
                self._log(veh, t, u)
                for zid, entry in entries[veh.route.name]:
                    if veh.p < entry <= p_new:
                        veh.zone_entry[zid] = t + dt
                veh.p, veh.v = p_new, v_new
                still.append(veh)
            self.active = still
            if k % 50 == 0:
                self.coord.prune(t)
        return self._finalize()

    def _log(self, veh: Vehicle, t: float, u: float) -> None:
        veh.ts.append(t)
        veh.ps.append(veh.p)
        veh.vs.append(veh.v)
        veh.us.append(u)

    def _finish(self, veh: Vehicle, t: float) -> None:
        exit_ = veh.route.exit
        if len(veh.ps) >= 2 and veh.ps[-1] > veh.ps[-2]:
            p0, p1 = veh.ps[-2], veh.ps[-1]
            veh.t_exit = veh.ts[-2] + (veh.ts[-1] - veh.ts[-2]) * (exit_ - p0) / (p1 - p0)
        else:
            veh.t_exit = t
        self.done.append(veh)
        self.coord.release(veh.vid)

    def _finalize(self) -> SimResult:
        return build_result(self)


_GAUSS = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])


def _speed_integral(plan: Trajectory, t0: np.ndarray, dt: float) -> np.ndarray:
    """Integral of the plan's speed over ``[t0, t0 + dt]`` for each step start.

    Steps are split at segment joints and each piece takes two-point
    Gauss-Legendre, which is exact for the quadratic speed of one segment.
    """
    if len(t0) == 0:
        return np.zeros(0)
    cuts = np.array(plan.joints + [plan.t_end])
    inner = cuts[(cuts > t0[0]) & (cuts < t0[-1] + dt)]
    bounds = np.unique(np.concatenate((t0, t0 + dt, inner)))
    bounds = bounds[(bounds >= t0[0]) & (bounds <= t0[-1] + dt)]
    lo, hi = bounds[:-1], bounds[1:]
    nodes = lo[:, None] + (hi - lo)[:, None] * _GAUSS[None, :]
    _, v, _ = plan.with_cruise(t0[-1] + 2.0 * dt).evaluate(nodes.ravel())
    piece = 0.5 * (hi - lo) * v.reshape(-1, 2).sum(axis=1)
    owner = np.clip(np.searchsorted(t0, lo + 1e-12, side="right") - 1, 0, len(t0) - 1)
    return np.bincount(owner, weights=piece, minlength=len(t0))


def step_distance(veh: Vehicle, dt: float) -> float:
    """Distance covered from the speed record alone.

    Planned steps integrate the plan's speed; other steps use the trapezoid,
    exact for their constant acceleration.
    """
    v = np.asarray(veh.vs, dtype=float)
    n = len(v) - 1
    if n < 1:
        return 0.0
    k_first = int(round(veh.ts[0] / dt))
    steps = 0.5 * dt * (v[:-1] + v[1:])
    owner = np.full(n, -1)
    for i, (k0, last, _) in enumerate(veh.plan_log):
        a, b = max(k0 - k_first, 0), min(last - k_first, n - 1)
        owner[a:b + 1] = i  # a later plan overrides the tail of an earlier one
    for i, (_, _, plan) in enumerate(veh.plan_log):
        idx = np.nonzero(owner == i)[0]
        if len(idx):
            steps[idx] = _speed_integral(plan, (k_first + idx) * dt, dt)
    return float(np.sum(steps))


def arrival_time(dist: float, v: float, v_des: float, accel: float) -> float:
    """Time to cover ``dist`` accelerating at ``accel`` up to ``v_des``, then cruising."""
    if dist <= 0.0:
        return 0.0
    if v >= v_des:
        return dist / max(v, 1e-6)
    t_acc = (v_des - v) / accel
    d_acc = v * t_acc + 0.5 * accel * t_acc * t_acc
    if d_acc >= dist:
        return bl.predicted_arrival(dist, v, accel)
    return t_acc + (dist - d_acc) / v_des


# --------------------------------------------------------------------------
# post-processing


def stop_events(veh: Vehicle, dt: float, layout) -> list[StopEvent]:
    """Runs of speed below ``STOP_SPEED`` lasting at least ``STOP_DURATION``."""
    v = np.asarray(veh.vs)
    slow = v < STOP_SPEED
    out = []
    k = 0
    n = len(v)
    zones = [layout.zone(z) for z in veh.route.zones]
    while k < n:
        if not slow[k]:
            k += 1
            continue
        j = k
        while j < n and slow[j]:
            j += 1
        dur = (j - k) * dt
        if dur >= STOP_DURATION - 1e-9:
            p = veh.ps[k]
            inside = any(z.control_start <= p < z.entry for z in zones)
            out.append(StopEvent(veh.vid, veh.ts[k], dur, p, inside))
        k = j
    return out


def vehicle_energy(veh: Vehicle, cfg: ScenarioConfig, table=None):
    """Per-stage powertrain split and ledger for one vehicle trace."""
    pt = cfg.powertrain
    v = np.asarray(veh.vs[:-1])
    u = np.asarray(veh.us[:-1])
    demand, _ = torque_demand(np.maximum(v, 0.0), u, pt.vehicle)
    demand = np.atleast_1d(demand)
    n_eng, n_mot = powertrain_states(v, pt)
    try:
        if table is not None:
            eng, mot, brk = online_policy_array(table, n_eng, n_mot, demand, cfg.alpha)
        else:
            eng, mot, brk = baseline_policy_array(n_eng, demand, pt)
    except PowertrainError as exc:
        raise PowertrainError(f"vehicle {veh.vid}: {exc}") from None
    inc = stage_increments(n_eng, n_mot, eng, mot, brk, cfg.dt, cfg.alpha, pt)
    ledger = accumulate(EnergyLedger(alpha=cfg.alpha), inc)
    logs = {"engine": eng, "motor": mot, "brake": brk, "fuel_rate": inc["fuel_g"] / cfg.dt}
    return ledger, logs


def _stats(x) -> dict:
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return {"mean": 0.0, "std": 0.0, "min": 0.0, "max": 0.0}
    return {"mean": float(np.mean(x)), "std": float(np.std(x)), "min": float(np.min(x)),
            "max": float(np.max(x))}


FLEET_FIELDS = ("travel_time", "entry_delay", "effort", "fuel_g_per_km", "battery_wh_per_km",
                "economy", "stops")


def fleet_summary(rows: list[VehicleMetrics]) -> dict:
    out = {"vehicles": len(rows)}
    for f in FLEET_FIELDS:
        out[f] = _stats([getattr(m, f) for m in rows])
    out["total_stops"] = int(sum(m.stops for m in rows))
    return out


def build_result(sim: Simulation) -> SimResult:
    cfg = sim.cfg
    layout = cfg.layout
    everyone = sorted(sim.done + sim.active, key=lambda x: x.vid)
    rows = []
    pt_logs = {}
    events = []
    total = EnergyLedger(alpha=cfg.alpha)
    drift = 0.0
    for veh in everyone:
        ev = stop_events(veh, cfg.dt, layout)
        events.extend(ev)
        if len(veh.vs) < 2:
            continue
        ledger, logs = vehicle_energy(veh, cfg, sim.table)
        pt_logs[veh.vid] = logs
        total = total + ledger
        p = np.asarray(veh.ps)
        travelled = step_distance(veh, cfg.dt)
        drift = max(drift, abs((p[-1] - p[0]) - travelled) / layout.total_length)
        complete = veh.t_exit is not None
        if not complete or veh.route.name not in cfg.metric_routes or veh.t_spawn < cfg.warmup:
            continue
        km = (p[-1] - p[0]) / 1000.0
        eq = ledger.equivalent_fuel_g(cfg.equivalence)
        u = np.asarray(veh.us[:-1])
        rows.append(VehicleMetrics(
            vid=veh.vid, route=veh.route.name, t_arrival=veh.t_arrival, t_spawn=veh.t_spawn,
            t_exit=veh.t_exit, entry_delay=veh.t_spawn - veh.t_arrival,
            travel_time=veh.t_exit - veh.t_spawn, distance_km=km, stops=len(ev),
            stops_in_control=sum(e.in_control_zone for e in ev),
            effort=float(0.5 * np.sum(u * u) * cfg.dt), fuel_g=ledger.fuel_g,
            battery_wh=ledger.battery_net_wh, equivalent_fuel_g=eq,
            fuel_g_per_km=ledger.fuel_g / km, battery_wh_per_km=ledger.battery_net_wh / km,
            economy=km / (eq / 1000.0) if eq > 0.0 else float("inf"),
            average_cost=ledger.average_cost if ledger.stages else 0.0))

    mismatch = 0
    sched = sim.coord.schedule
    if sim.cav:
        for veh in everyone:
            for zid, t_real in veh.zone_entry.items():
                t_sched = sched.zone_time(veh.vid, zid)
                if t_sched is not None and not (t_sched - 1e-9 <= t_real <= t_sched + cfg.dt + 1e-9):
                    mismatch += 1
    sep = sim.coord.violations() if sim.cav else []
    report = MetricsReport(
        config=config_to_dict(cfg),
        vehicles=rows,
        fleet=fleet_summary(rows),
        safety={
            "rear_end_violations": len(sim.violations),
            "collisions": sim.collisions,
            "min_gap_margin": float(min((s - need for _, _, _, s, need in sim.violations), default=0.0)),
            "separation_violations": len(sep),
            "entry_time_mismatch": mismatch,
        },
        stops={
            "all": len(events),
            "in_control_zone": sum(e.in_control_zone for e in events),
            "outside_control_zone": sum(not e.in_control_zone for e in events),
            "vehicles_spawned": len(everyone),
            "vehicles_completed": len(sim.done),
            "vehicles_waiting": sum(len(q) for q in sim.arrivals.values()),
        },
        energy={
            "fuel_g": total.fuel_g, "battery_out_wh": total.battery_out_wh,
            "battery_in_wh": total.battery_in_wh, "brake_wh": total.brake_wh,
            "engine_wh": total.engine_wh, "motor_wh": total.motor_wh, "wheel_wh": total.wheel_wh,
            "average_cost": total.average_cost if total.stages else 0.0,
            "stages": total.stages,
            "audit_residual": total.audit_residual() if total.stages else 0.0,
            "position_drift": drift,
        },
        flags=dict(sim.coord.flags),
    )
    return SimResult(report, everyone, sim.coord, pt_logs, events)


def run_scenario(cfg: ScenarioConfig) -> SimResult:
    """Simulate one scenario; coordinated scenarios raise on any rear-end gap violation."""
    log.info("running %s / %s / seed %d", cfg.scenario, cfg.demand, cfg.seed)
    return Simulation(cfg).run()


# --------------------------------------------------------------------------
# comparison


class ComparisonError(ValueError):
    pass


_SAME = ("demand", "rates", "route_shares", "corridor", "seed", "duration", "warmup", "dt",
         "metric_routes", "equivalence")


def compare_runs(base: MetricsReport, treat: MetricsReport) -> dict:
    """Improvement of ``treat`` over ``base`` in percent.

    ``economy`` is the change of fleet-mean km per kg of equivalent fuel;
    ``economy_std`` is the across-vehicle spread of each treated vehicle's
    economy relative to the baseline fleet mean.
    """
    for key in _SAME:
        if base.config.get(key) != treat.config.get(key):
            raise ComparisonError(f"runs differ in {key!r}; refusing to compare")
    if not base.vehicles or not treat.vehicles:
        raise ComparisonError("both runs need at least one counted vehicle")
    e_base = np.array([m.economy for m in base.vehicles])
    e_treat = np.array([m.economy for m in treat.vehicles])
    mean_base = float(np.mean(e_base))
    rel = 100.0 * (e_treat / mean_base - 1.0)

    def pct(f, lower_is_better=False):
        b = float(np.mean([getattr(m, f) for m in base.vehicles]))
        t = float(np.mean([getattr(m, f) for m in treat.vehicles]))
        if b == 0.0:
            return 0.0
        return 100.0 * ((b - t) / abs(b) if lower_is_better else (t - b) / abs(b))

    return {
        "baseline": base.config["scenario"], "treatment": treat.config["scenario"],
        "demand": base.config["demand"], "seed": base.config["seed"],
        "economy": float(np.mean(rel)),
        "economy_std": float(np.std(rel)),
        "equivalent_fuel": pct("equivalent_fuel_g", lower_is_better=True),
        "fuel_per_km": pct("fuel_g_per_km", lower_is_better=True),
        "travel_time": pct("travel_time", lower_is_better=True),
        "effort": pct("effort", lower_is_better=True),
        "vehicles": [len(base.vehicles), len(treat.vehicles)],
    }


# --------------------------------------------------------------------------
# output files

TRAJECTORY_HEADER = ["t", "id", "p", "v", "u", "T_eng", "T_mot", "fuel_rate"]
PROFILE_HEADER = ["scenario", "id", "route", "t", "p", "v"]


def _open(path: Path):
    try:
        return path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None


def emit_outputs(result: SimResult, outdir: str | Path, profile_every: float = 1.0) -> dict[str, Path]:
    """Write trajectory, schedule, speed-profile CSVs and the summary JSON."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from None
    paths = {k: out / f for k, f in (("trajectory", "trajectory.csv"), ("schedule", "schedule.csv"),
                                      ("profile", "speed_profile.csv"), ("summary", "summary.json"))}
    cfg = result.report.config
    dt = cfg["dt"]
    stride = max(int(round(profile_every / dt)), 1)
    with _open(paths["trajectory"]) as fh, _open(paths["profile"]) as fp:
        w = csv.writer(fh)
        wp = csv.writer(fp)
        w.writerow(TRAJECTORY_HEADER)
        wp.writerow(PROFILE_HEADER)
        for veh in result.vehicles:
            logs = result.powertrain_logs.get(veh.vid)
            for j, (t, p, v, u) in enumerate(zip(veh.ts, veh.ps, veh.vs, veh.us)):
                if logs is not None and j < len(logs["engine"]):
                    te, tm, fr = logs["engine"][j], logs["motor"][j], logs["fuel_rate"][j]
                else:
                    te = tm = fr = 0.0
                w.writerow([f"{t:.3f}", veh.vid, f"{p:.4f}", f"{v:.4f}", f"{u:.5f}",
                            f"{te:.4f}", f"{tm:.4f}", f"{fr:.6f}"])
                if j % stride == 0:
                    wp.writerow([cfg["scenario"], veh.vid, veh.route.name, f"{t:.3f}",
                                 f"{p:.3f}", f"{v:.4f}"])
    sched = result.coordinator.schedule
    with _open(paths["schedule"]) as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle", "zone", "time", "realized"])
        realized = {veh.vid: veh.zone_entry for veh in result.vehicles}
        for vid, z, t in sched.rows():
            r = realized.get(vid, {}).get(z)
            w.writerow([vid, z, f"{t:.6f}", "" if r is None else f"{r:.6f}"])
    with _open(paths["summary"]) as fh:
        fh.write(result.report.to_json())
        fh.write("\n")
    return paths


def load_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
