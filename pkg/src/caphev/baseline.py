"""Human-driver stand-in: intelligent-driver car following, gap acceptance, fixed-time signal."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable

from .model import ControlBounds, DomainError

log = logging.getLogger(__name__)

GO = "go"
STOP = "stop-at-line"
GREEN = "green"
RED = "red"


@dataclass(frozen=True)
class DriverParams:
    max_accel: float = 1.5
    comfortable_decel: float = 2.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    exponent: float = 4.0

    def __post_init__(self):
        if min(self.max_accel, self.comfortable_decel, self.time_headway,
               self.min_gap, self.exponent) <= 0.0:
            raise DomainError("driver parameters must be positive")


@dataclass(frozen=True)
class YieldRule:
    critical_gap: float = 3.5  # s, lag needed ahead of the next major-stream arrival
    follow_up: float = 0.5  # s, minimum time behind a major-stream vehicle that went first
    lookahead: float = 80.0  # m upstream of the line where drivers start checking

    def __post_init__(self):
        if self.critical_gap <= 0.0 or self.follow_up < 0.0:
            raise DomainError("critical gap must be positive and follow-up nonnegative")


@dataclass(frozen=True)
class SignalPlan:
    green: float
    red: float
    offset: float = 0.0

    def __post_init__(self):
        if self.green <= 0.0 or self.red <= 0.0:
            raise DomainError("green and red durations must be positive")


def desired_gap(v: float, dv: float, params: DriverParams) -> float:
    dyn = v * params.time_headway + v * dv / (2.0 * math.sqrt(params.max_accel * params.comfortable_decel))
    return params.min_gap + max(dyn, 0.0)


def follow_accel(v: float, desired_speed: float, gap: float | None = None,
                 leader_speed: float | None = None, params: DriverParams = DriverParams(),
                 bounds: ControlBounds = ControlBounds()) -> float:
    """Intelligent-driver acceleration, clamped to the control bounds.

    ``gap`` is the bumper spacing to the leader; ``None`` means a free road.
    """
    if v < 0.0 or (leader_speed is not None and leader_speed < 0.0):
        raise DomainError("speeds must be nonnegative")
    free = 1.0 - (v / desired_speed) ** params.exponent
    if gap is None:
        acc = params.max_accel * free
    elif gap <= 0.0:
        log.warning("nonpositive spacing %.3f m; emergency braking", gap)
        return bounds.u_min
    else:
        s_star = desired_gap(v, v - leader_speed, params)
        acc = params.max_accel * (free - (s_star / gap) ** 2)
    return min(max(acc, bounds.u_min), bounds.u_max)


def anticipated_speed(desired_speed: float, next_change: tuple[float, float] | None,
                      position: float, params: DriverParams = DriverParams()) -> float:
    """Desired speed lowered ahead of a slower segment so drivers brake comfortably."""
    if next_change is None:
        return desired_speed
    start, slower = next_change
    reach = math.sqrt(slower * slower + 2.0 * params.comfortable_decel * max(start - position, 0.0))
    return min(desired_speed, reach)


def approach_decel(v: float, next_change: tuple[float, float] | None, position: float,
                   params: DriverParams = DriverParams()) -> float | None:
    """Constant deceleration that meets a lower limit at its start, once it reaches half of ``b``.

    IDM's free-road term alone brakes too gently to honour a speed drop at the
    sign; returning None means no extra braking is needed yet.
    """
    if next_change is None:
        return None
    start, slower = next_change
    dist = start - position
    if dist <= 0.0 or v <= slower:
        return None
    need = (v * v - slower * slower) / (2.0 * dist)
    if need < 0.5 * params.comfortable_decel:
        return None
    return -need


def predicted_arrival(distance: float, v: float, accel: float) -> float:
    """Time to cover ``distance`` from speed ``v`` under constant ``accel`` (>0)."""
    if distance <= 0.0:
        return 0.0
    return (-v + math.sqrt(v * v + 2.0 * accel * distance)) / accel


def yield_decision(own_arrival: float, conflicting_arrivals: Iterable[float],
                   rule: YieldRule = YieldRule()) -> str:
    """Lag acceptance: the next conflicting arrival must trail ours by the critical gap.

    Conflicting vehicles arriving first must lead by at least ``follow_up``.
    """
    for t in conflicting_arrivals:
        if t >= own_arrival:
            if t - own_arrival < rule.critical_gap:
                return STOP
        elif own_arrival - t < rule.follow_up:
            return STOP
    return GO


def signal_phase(t: float, plan: SignalPlan) -> str:
    """Phase of a fixed-time signal; green on ``[0, green)`` of each cycle."""
    phase = (t - plan.offset) % (plan.green + plan.red)
    return GREEN if phase < plan.green else RED
