"""Powertrain level: torque demand, efficiency maps, Pareto torque split and energy ledger.

The engine and motor are coupled to one shaft through a single lumped ratio.
The engine is declutched (speed 0) below ``clutch_speed``. The split never
loads the engine beyond the driver's demand, so the battery is only charged
by regeneration.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import DomainError

log = logging.getLogger(__name__)

RPM_PER_RAD_S = 60.0 / (2.0 * math.pi)
FUEL_LHV = 44.0e6  # J/kg
J_PER_WH = 3600.0
TABLE_FORMAT_VERSION = 1


class PowertrainError(DomainError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1800.0
    drag_coefficient: float = 0.3
    frontal_area: float = 2.3
    rolling_coefficient: float = 0.009
    air_density: float = 1.225
    wheel_radius: float = 0.32
    ratio: float = 3.5
    gravity: float = 9.81
    clutch_speed: float = 3.0  # m/s


@dataclass(frozen=True)
class PowertrainLimits:
    engine_torque_max: float = 250.0
    motor_torque_max: float = 300.0
    engine_idle: float = 300.0  # rpm
    engine_speed_max: float = 6000.0
    motor_speed_max: float = 10000.0


@dataclass(frozen=True)
class EfficiencyMap:
    """Gaussian bump ``peak * exp(-((N-n_c)/n_w)^2 - ((T-t_c)/t_w)^2)``."""

    peak: float
    speed_center: float
    speed_width: float
    torque_center: float
    torque_width: float
    speed_max: float
    torque_max: float
    symmetric_torque: bool = False

    def evaluate(self, N, T):
        """Return ``(eta, out_of_domain)``; inputs outside the box are clamped."""
        N = np.asarray(N, dtype=float)
        T = np.asarray(T, dtype=float)
        Tm = np.abs(T) if self.symmetric_torque else T
        t_lo = 0.0
        oob = (N < 0.0) | (N > self.speed_max) | (Tm < t_lo) | (Tm > self.torque_max)
        Nc = np.clip(N, 0.0, self.speed_max)
        Tc = np.clip(Tm, t_lo, self.torque_max)
        x = (Nc - self.speed_center) / self.speed_width
        y = (Tc - self.torque_center) / self.torque_width
        eta = self.peak * np.exp(-(x * x) - (y * y))
        if eta.ndim == 0:
            return float(eta), bool(oob)
        return eta, oob

    def __call__(self, N, T):
        eta, oob = self.evaluate(N, T)
        if np.any(oob):
            log.debug("efficiency map queried outside its domain; clamped")
        return eta


ENGINE_MAP = EfficiencyMap(0.36, 2500.0, 1800.0, 170.0, 140.0, 6000.0, 250.0)
MOTOR_MAP = EfficiencyMap(0.90, 3000.0, 4000.0, 100.0, 250.0, 10000.0, 300.0,
                          symmetric_torque=True)


def engine_efficiency(N: float, T: float, emap: EfficiencyMap = ENGINE_MAP) -> float:
    if T <= 0.0:
        raise DomainError("engine efficiency needs positive torque")
    return emap(N, T)


def motor_efficiency(N: float, T: float, mmap: EfficiencyMap = MOTOR_MAP) -> float:
    return mmap(N, T)


@dataclass(frozen=True)
class PowertrainState:
    engine_speed: float  # rpm, 0 when declutched
    motor_speed: float  # rpm

    @property
    def engine_on(self) -> bool:
        return self.engine_speed > 0.0


@dataclass(frozen=True)
class TorqueSplit:
    engine: float
    motor: float
    brake: float = 0.0  # friction brake torque (<= 0) at the shaft

    @property
    def delivered(self) -> float:
        return self.engine + self.motor + self.brake


@dataclass(frozen=True)
class Powertrain:
    """Bundle of vehicle, limits and maps passed around by the simulator."""

    vehicle: VehicleParams = VehicleParams()
    limits: PowertrainLimits = PowertrainLimits()
    engine_map: EfficiencyMap = ENGINE_MAP
    motor_map: EfficiencyMap = MOTOR_MAP


DEFAULT_POWERTRAIN = Powertrain()


# --------------------------------------------------------------------------
# load model


def torque_demand(v, a, params: VehicleParams = VehicleParams()):
    """Shaft torque demand and wheel angular speed for speed ``v`` and accel ``a``."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.any(v < 0.0):
        raise DomainError("negative speed")
    p = params
    force = (p.mass * a
             + 0.5 * p.air_density * p.drag_coefficient * p.frontal_area * v * v
             + p.mass * p.gravity * p.rolling_coefficient * (v > 0.0))
    torque = force * p.wheel_radius / p.ratio
    omega = v / p.wheel_radius
    if torque.ndim == 0:
        return float(torque), float(omega)
    return torque, omega


def shaft_speed(v, params: VehicleParams = VehicleParams()):
    """Shaft speed in rpm."""
    return np.asarray(v, dtype=float) / params.wheel_radius * params.ratio * RPM_PER_RAD_S


def powertrain_state(v: float, pt: Powertrain = DEFAULT_POWERTRAIN) -> PowertrainState:
    n = float(shaft_speed(v, pt.vehicle))
    on = v >= pt.vehicle.clutch_speed and n >= pt.limits.engine_idle
    return PowertrainState(n if on else 0.0, n)


def powertrain_states(v: np.ndarray, pt: Powertrain = DEFAULT_POWERTRAIN):
    n = shaft_speed(v, pt.vehicle)
    on = (np.asarray(v) >= pt.vehicle.clutch_speed) & (n >= pt.limits.engine_idle)
    return np.where(on, n, 0.0), n


# --------------------------------------------------------------------------
# split policies


def weighted_efficiency(state: PowertrainState, split: TorqueSplit, alpha: float,
                        pt: Powertrain = DEFAULT_POWERTRAIN) -> float:
    """``alpha*eta_eng + (1-alpha)*eta_mot``; a stopped engine contributes 0."""
    w = (1.0 - alpha) * pt.motor_map(state.motor_speed, split.motor)
    if split.engine > 0.0:
        w += alpha * pt.engine_map(state.engine_speed, split.engine)
    return w


def stage_cost(state: PowertrainState, split: TorqueSplit, alpha: float,
               pt: Powertrain = DEFAULT_POWERTRAIN) -> float:
    """One-stage cost ``1 - weighted efficiency``; an idle powertrain costs nothing."""
    if split.engine == 0.0 and split.motor == 0.0:
        return 0.0
    return 1.0 - weighted_efficiency(state, split, alpha, pt)


def engine_torque_range(state: PowertrainState, demand: float,
                        pt: Powertrain = DEFAULT_POWERTRAIN) -> tuple[float, float]:
    """Feasible engine torque interval for a positive demand."""
    lim = pt.limits
    hi = min(demand, lim.engine_torque_max) if state.engine_on else 0.0
    lo = max(0.0, demand - lim.motor_torque_max)
    return lo, hi


def _negative_split(demand: float, pt: Powertrain) -> TorqueSplit:
    motor = max(demand, -pt.limits.motor_torque_max)
    return TorqueSplit(0.0, motor, demand - motor)


def split_candidates(state: PowertrainState, demand: float, step: float = 1.0,
                     pt: Powertrain = DEFAULT_POWERTRAIN) -> np.ndarray:
    """Engine torques searched by the Pareto split: the ``step`` grid plus both ends."""
    lo, hi = engine_torque_range(state, demand, pt)
    if lo > hi + 1e-12:
        raise PowertrainError(
            f"demand {demand:.3f} Nm exceeds available torque (engine {'on' if state.engine_on else 'off'})")
    grid = step * np.arange(math.ceil(lo / step), math.floor(hi / step) + 1)
    return np.unique(np.concatenate(([lo], grid, [hi])))


def pareto_split(state: PowertrainState, demand: float, alpha: float,
                 pt: Powertrain = DEFAULT_POWERTRAIN, step: float = 1.0) -> TorqueSplit:
    """Maximise ``alpha*eta_eng + (1-alpha)*eta_mot`` subject to ``T_eng + T_mot = demand``.

    Searches engine torque on a ``step`` grid; ties go to the smallest engine
    torque. Negative demand is met by the motor, with friction brakes taking
    whatever exceeds the regeneration limit.
    """
    if not 0.0 <= alpha <= 1.0:
        raise DomainError("alpha must lie in [0, 1]")
    if demand == 0.0:
        return TorqueSplit(0.0, 0.0)
    if demand < 0.0:
        return _negative_split(demand, pt)
    eng = split_candidates(state, demand, step, pt)
    mot = demand - eng
    obj = (1.0 - alpha) * pt.motor_map(state.motor_speed, mot)
    on = eng > 0.0
    if state.engine_on and np.any(on):
        obj[on] += alpha * pt.engine_map(state.engine_speed, eng[on])
    k = int(np.argmax(obj))
    return TorqueSplit(float(eng[k]), float(demand - eng[k]))


def baseline_policy(state: PowertrainState, demand: float,
                    pt: Powertrain = DEFAULT_POWERTRAIN,
                    motor_only_below: float = 60.0) -> TorqueSplit:
    """Rule-based split: motor for light load and all braking, engine otherwise."""
    lim = pt.limits
    if demand == 0.0:
        return TorqueSplit(0.0, 0.0)
    if demand < 0.0:
        return _negative_split(demand, pt)
    if demand <= motor_only_below or not state.engine_on:
        if demand > lim.motor_torque_max:
            if not state.engine_on:
                raise PowertrainError(f"demand {demand:.3f} Nm exceeds motor limit with engine off")
        else:
            return TorqueSplit(0.0, demand)
    eng = min(demand, lim.engine_torque_max)
    motor = demand - eng
    if motor > lim.motor_torque_max:
        raise PowertrainError(f"demand {demand:.3f} Nm exceeds combined limit")
    return TorqueSplit(eng, motor)


def baseline_policy_array(engine_speed, demand, pt: Powertrain = DEFAULT_POWERTRAIN,
                          motor_only_below: float = 60.0):
    """Vectorised :func:`baseline_policy` returning ``(engine, motor, brake)`` arrays."""
    lim = pt.limits
    demand = np.asarray(demand, dtype=float)
    on = np.asarray(engine_speed) > 0.0
    neg = demand < 0.0
    motor_only = (demand > 0.0) & ((demand <= motor_only_below) | ~on)
    eng = np.where(~neg & ~motor_only & (demand > 0.0), np.minimum(demand, lim.engine_torque_max), 0.0)
    motor = np.where(neg, np.maximum(demand, -lim.motor_torque_max), demand - eng)
    brake = np.where(neg, demand - motor, 0.0)
    if np.any(motor > lim.motor_torque_max):
        raise PowertrainError("demand exceeds available torque")
    return eng, motor, brake


# --------------------------------------------------------------------------
# offline table and online lookup


@dataclass(frozen=True)
class TableGrid:
    speed_step: float = 250.0
    speed_max: float = 2250.0
    torque_step: float = 10.0
    torque_min: float = -300.0
    torque_max: float = 550.0
    alpha_step: float = 0.1

    def engine_speeds(self, idle: float) -> np.ndarray:
        on = idle + self.speed_step * np.arange(int(math.floor((self.speed_max - idle) / self.speed_step + 1e-9)) + 1)
        return np.concatenate(([0.0], on))

    def motor_speeds(self) -> np.ndarray:
        return self.speed_step * np.arange(int(round(self.speed_max / self.speed_step)) + 1)

    def torques(self) -> np.ndarray:
        n = int(round((self.torque_max - self.torque_min) / self.torque_step))
        return self.torque_min + self.torque_step * np.arange(n + 1)

    def alphas(self) -> np.ndarray:
        n = int(round(1.0 / self.alpha_step))
        return np.round(self.alpha_step * np.arange(n + 1), 12)


@dataclass
class ParetoTable:
    engine_speeds: np.ndarray
    motor_speeds: np.ndarray
    torques: np.ndarray
    alphas: np.ndarray
    engine: np.ndarray  # [i_eng, i_mot, i_torque, i_alpha]
    motor: np.ndarray
    feasible: np.ndarray
    grid: TableGrid = field(default_factory=TableGrid)
    powertrain: Powertrain = DEFAULT_POWERTRAIN

    def _index(self, axis: np.ndarray, x):
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(axis, x), 1, len(axis) - 1)
        left = axis[j - 1]
        right = axis[j]
        j = np.where(x - left <= right - x, j - 1, j)
        return np.clip(j, 0, len(axis) - 1) if len(axis) > 1 else np.zeros_like(j)

    def cell(self, engine_speed, motor_speed, demand, alpha):
        """Nearest grid indices; an engaged engine never maps to the declutched row."""
        ie = self._index(self.engine_speeds, engine_speed)
        on = np.asarray(engine_speed) > 0.0
        if len(self.engine_speeds) > 1:
            ie = np.where(on, np.maximum(ie, 1), 0)
        it = self._index(self.torques, demand)
        # a nonzero demand never maps to the zero-demand cell
        d = np.asarray(demand)
        zero = np.nonzero(self.torques == 0.0)[0]
        if len(zero) and 0 < zero[0] < len(self.torques) - 1:
            z = zero[0]
            it = np.where((d > 0.0) & (it <= z), z + 1, np.where((d < 0.0) & (it >= z), z - 1, it))
        return (ie, self._index(self.motor_speeds, motor_speed), it,
                self._index(self.alphas, alpha))

    def in_envelope(self, motor_speed, demand):
        ms = np.asarray(motor_speed)
        d = np.asarray(demand)
        half_t = 0.5 * self.grid.torque_step
        return ((ms <= self.motor_speeds[-1] + 0.5 * self.grid.speed_step)
                & (d >= self.torques[0] - half_t) & (d <= self.torques[-1] + half_t))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        header = {
            "format": "caphev-pareto-table",
            "version": TABLE_FORMAT_VERSION,
            "grid": asdict(self.grid),
            "vehicle": asdict(self.powertrain.vehicle),
            "limits": asdict(self.powertrain.limits),
            "engine_map": asdict(self.powertrain.engine_map),
            "motor_map": asdict(self.powertrain.motor_map),
        }
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                     engine_speeds=self.engine_speeds, motor_speeds=self.motor_speeds,
                     torques=self.torques, alphas=self.alphas, engine=self.engine,
                     motor=self.motor, feasible=self.feasible)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ParetoTable":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != "caphev-pareto-table":
                raise ValueError(f"{path}: not a Pareto table file")
            if header.get("version") != TABLE_FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported table version {header.get('version')}")
            pt = Powertrain(VehicleParams(**header["vehicle"]), PowertrainLimits(**header["limits"]),
                            EfficiencyMap(**header["engine_map"]), EfficiencyMap(**header["motor_map"]))
            return cls(z["engine_speeds"], z["motor_speeds"], z["torques"], z["alphas"],
                       z["engine"], z["motor"], z["feasible"], TableGrid(**header["grid"]), pt)


def build_pareto_table(grid: TableGrid = TableGrid(), pt: Powertrain = DEFAULT_POWERTRAIN,
                       engine_speeds: Sequence[float] | None = None,
                       motor_speeds: Sequence[float] | None = None,
                       torques: Sequence[float] | None = None,
                       alphas: Sequence[float] | None = None) -> ParetoTable:
    """Tabulate :func:`pareto_split` over the grid; infeasible cells are marked."""
    es = np.asarray(engine_speeds if engine_speeds is not None else grid.engine_speeds(pt.limits.engine_idle), float)
    ms = np.asarray(motor_speeds if motor_speeds is not None else grid.motor_speeds(), float)
    ts = np.asarray(torques if torques is not None else grid.torques(), float)
    al = np.asarray(alphas if alphas is not None else grid.alphas(), float)
    shape = (len(es), len(ms), len(ts), len(al))
    eng = np.zeros(shape)
    mot = np.zeros(shape)
    ok = np.ones(shape, dtype=bool)
    if np.any((al < 0.0) | (al > 1.0)):
        raise DomainError("alpha must lie in [0, 1]")
    a_col = al[:, None]
    for i, ne in enumerate(es):
        for j, nm in enumerate(ms):
            state = PowertrainState(float(ne), float(nm))
            for k, d in enumerate(ts):
                d = float(d)
                if d <= 0.0:
                    s = pareto_split(state, d, 0.0, pt)
                    eng[i, j, k, :], mot[i, j, k, :] = s.engine, s.motor
                    continue
                try:
                    cand = split_candidates(state, d, 1.0, pt)
                except PowertrainError:
                    ok[i, j, k, :] = False
                    continue
                # same arithmetic as pareto_split, evaluated for every alpha at once
                obj = (1.0 - a_col) * pt.motor_map(state.motor_speed, d - cand)[None, :]
                on = cand > 0.0
                if state.engine_on and np.any(on):
                    obj[:, on] += a_col * pt.engine_map(state.engine_speed, cand[on])[None, :]
                best = cand[np.argmax(obj, axis=1)]
                eng[i, j, k, :] = best
                mot[i, j, k, :] = d - best
    return ParetoTable(es, ms, ts, al, eng, mot, ok, grid, pt)


@lru_cache(maxsize=4)
def cached_table(grid: TableGrid = TableGrid(), pt: Powertrain = DEFAULT_POWERTRAIN) -> ParetoTable:
    return build_pareto_table(grid, pt)


def _fit(demand, on, want, pt: Powertrain):
    lim = pt.limits
    pos = demand > 0.0
    hi = np.where(on, np.minimum(demand, lim.engine_torque_max), 0.0)
    lo = np.maximum(0.0, demand - lim.motor_torque_max)
    if np.any(pos & (lo > hi + 1e-12)):
        raise PowertrainError("demand exceeds available torque")
    eng = np.where(pos, np.clip(want, lo, np.maximum(hi, lo)), 0.0)
    motor = np.where(pos, demand - eng, np.maximum(demand, -lim.motor_torque_max))
    brake = np.where(pos, 0.0, demand - motor)
    return eng, motor, brake


def _objective(engine_speed, motor_speed, eng, motor, alpha, pt: Powertrain):
    obj = (1.0 - alpha) * pt.motor_map(motor_speed, motor)
    return obj + np.where(eng > 0.0, alpha * pt.engine_map(engine_speed, np.maximum(eng, 1e-9)), 0.0)


def _repair(engine_speed, motor_speed, demand, alpha, stored_engine, stored_motor,
            pt: Powertrain):
    """Fit the stored split of a grid cell to the exact demand.

    Two repairs are tried: keep the stored engine torque (motor absorbs the
    difference) or keep the stored motor torque (engine absorbs it). Pure
    engine or pure motor cells stay pure. Both are clipped into the feasible
    interval and the one with the higher weighted efficiency is returned.
    """
    demand = np.asarray(demand, dtype=float)
    on = np.asarray(engine_speed) > 0.0
    pure_eng = stored_motor == 0.0
    pure_mot = stored_engine == 0.0
    keep_eng = np.where(pure_eng, demand, np.where(pure_mot, 0.0, stored_engine))
    keep_mot = np.where(pure_eng, demand, np.where(pure_mot, 0.0, demand - stored_motor))
    a = _fit(demand, on, keep_eng, pt)
    b = _fit(demand, on, keep_mot, pt)
    oa = _objective(engine_speed, motor_speed, a[0], a[1], alpha, pt)
    ob = _objective(engine_speed, motor_speed, b[0], b[1], alpha, pt)
    use_b = ob > oa + 1e-12
    return tuple(np.where(use_b, y, x) for x, y in zip(a, b))


def online_policy(table: ParetoTable, state: PowertrainState, demand: float,
                  alpha: float) -> TorqueSplit:
    """Nearest-cell table lookup with sum-constraint repair."""
    if not bool(table.in_envelope(state.motor_speed, demand)):
        log.info("query (%.1f rpm, %.1f Nm) outside table envelope; solving directly",
                 state.motor_speed, demand)
        return pareto_split(state, demand, alpha, table.powertrain)
    idx = table.cell(state.engine_speed, state.motor_speed, demand, alpha)
    eng, motor, brake = _repair(state.engine_speed, state.motor_speed, demand, alpha,
                                 table.engine[idx], table.motor[idx], table.powertrain)
    return TorqueSplit(float(eng), float(motor), float(brake))


def online_policy_array(table: ParetoTable, engine_speed, motor_speed, demand, alpha: float):
    """Vectorised :func:`online_policy` returning ``(engine, motor, brake)`` arrays."""
    engine_speed = np.asarray(engine_speed, dtype=float)
    motor_speed = np.asarray(motor_speed, dtype=float)
    demand = np.asarray(demand, dtype=float)
    idx = table.cell(engine_speed, motor_speed, demand, np.full_like(demand, alpha))
    eng, motor, brake = _repair(engine_speed, motor_speed, demand, alpha,
                                 table.engine[idx], table.motor[idx], table.powertrain)
    outside = ~table.in_envelope(motor_speed, demand)
    for j in np.nonzero(outside)[0]:
        s = pareto_split(PowertrainState(engine_speed[j], motor_speed[j]), float(demand[j]),
                         alpha, table.powertrain)
        eng[j], motor[j], brake[j] = s.engine, s.motor, s.brake
    return eng, motor, brake


# --------------------------------------------------------------------------
# energy accounting


@dataclass(frozen=True)
class EnergyLedger:
    alpha: float = 0.5
    fuel_g: float = 0.0
    battery_out_wh: float = 0.0
    battery_in_wh: float = 0.0
    brake_wh: float = 0.0
    engine_wh: float = 0.0
    motor_wh: float = 0.0  # signed mechanical energy through the motor
    wheel_wh: float = 0.0  # signed demand energy at the shaft
    cost_sum: float = 0.0
    stages: int = 0

    @property
    def battery_net_wh(self) -> float:
        return self.battery_out_wh - self.battery_in_wh

    @property
    def average_cost(self) -> float:
        if self.stages == 0:
            raise DomainError("no stages recorded")
        return self.cost_sum / self.stages

    def audit_residual(self) -> float:
        """Relative mismatch of wheel = engine + motor - brake."""
        lhs = self.wheel_wh
        rhs = self.engine_wh + self.motor_wh - self.brake_wh
        scale = max(abs(self.engine_wh) + abs(self.motor_wh) + abs(self.brake_wh), 1e-12)
        return abs(lhs - rhs) / scale

    def equivalent_fuel_g(self, equivalence: float = 2.5) -> float:
        """Fuel plus net battery energy converted at ``equivalence`` x chemical energy."""
        return self.fuel_g + equivalence * self.battery_net_wh * J_PER_WH / FUEL_LHV * 1000.0

    def __add__(self, other: "EnergyLedger") -> "EnergyLedger":
        return replace(self, **{f: getattr(self, f) + getattr(other, f) for f in _SUMMED})


_SUMMED = ("fuel_g", "battery_out_wh", "battery_in_wh", "brake_wh", "engine_wh",
           "motor_wh", "wheel_wh", "cost_sum", "stages")


def _stage_terms(engine_speed, motor_speed, eng, motor, brake, dt, alpha, pt: Powertrain):
    """Per-stage increments for arrays of stages (all inputs broadcastable)."""
    engine_speed = np.asarray(engine_speed, dtype=float)
    motor_speed = np.asarray(motor_speed, dtype=float)
    eng = np.asarray(eng, dtype=float)
    motor = np.asarray(motor, dtype=float)
    brake = np.asarray(brake, dtype=float)
    w = motor_speed / RPM_PER_RAD_S  # shaft rad/s
    eta_e = pt.engine_map(engine_speed, np.maximum(eng, 1e-9))
    eta_m = pt.motor_map(motor_speed, motor)
    p_eng = eng * w
    p_mot = motor * w
    fuel = np.where(eng > 0.0, p_eng / eta_e / FUEL_LHV * dt * 1000.0, 0.0)
    bout = np.where(motor > 0.0, p_mot / eta_m * dt / J_PER_WH, 0.0)
    bin_ = np.where(motor < 0.0, -p_mot * eta_m * dt / J_PER_WH, 0.0)
    brk = -brake * w * dt / J_PER_WH
    weighted = alpha * eta_e * (eng > 0.0) + (1.0 - alpha) * eta_m
    idle = (eng == 0.0) & (motor == 0.0)
    k = np.where(idle, 0.0, 1.0 - weighted)
    return {
        "fuel_g": fuel, "battery_out_wh": bout, "battery_in_wh": bin_, "brake_wh": brk,
        "engine_wh": p_eng * dt / J_PER_WH, "motor_wh": p_mot * dt / J_PER_WH,
        "wheel_wh": (eng + motor + brake) * w * dt / J_PER_WH, "cost_sum": k,
    }


def step_energy(ledger: EnergyLedger, state: PowertrainState, split: TorqueSplit, dt: float,
                pt: Powertrain = DEFAULT_POWERTRAIN) -> EnergyLedger:
    """Book one stage of duration ``dt``."""
    if dt <= 0.0:
        raise DomainError("dt must be positive")
    terms = _stage_terms(state.engine_speed, state.motor_speed, split.engine, split.motor,
                         split.brake, dt, ledger.alpha, pt)
    upd = {f: getattr(ledger, f) + float(terms[f]) for f in terms}
    return replace(ledger, stages=ledger.stages + 1, **upd)


def stage_increments(engine_speed, motor_speed, eng, motor, brake, dt: float, alpha: float,
                     pt: Powertrain = DEFAULT_POWERTRAIN) -> dict[str, np.ndarray]:
    """Per-stage ledger increments, one entry per stage."""
    return _stage_terms(engine_speed, motor_speed, eng, motor, brake, dt, alpha, pt)


def accumulate(ledger: EnergyLedger, increments: dict[str, np.ndarray]) -> EnergyLedger:
    n = len(np.atleast_1d(increments["cost_sum"]))
    upd = {f: getattr(ledger, f) + float(np.sum(v)) for f, v in increments.items()}
    return replace(ledger, stages=ledger.stages + n, **upd)


Policy = Callable[[PowertrainState, float], TorqueSplit]


def evaluate_average_cost(policy: Policy, demands: Iterable[tuple[PowertrainState, float]],
                          alpha: float = 0.5, pt: Powertrain = DEFAULT_POWERTRAIN) -> float:
    """Empirical long-run average of the one-stage cost along a demand sequence."""
    total = 0.0
    n = 0
    for state, demand in demands:
        total += stage_cost(state, policy(state, demand), alpha, pt)
        n += 1
    if n == 0:
        raise DomainError("empty demand sequence")
    return total / n
