"""Scenario configuration: dataclasses, JSON loading and schema validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .baseline import DriverParams, SignalPlan, YieldRule
from .coordination import CoordinationParams
from .model import (ControlBounds, CorridorLayout, DomainError, Route, SafetyGapModel, Zone,
                    default_layout)
from .powertrain import DEFAULT_POWERTRAIN, Powertrain, PowertrainLimits, VehicleParams

SCENARIOS = ("baseline", "isolated", "corridor")
DEMAND_LEVELS = ("light", "medium", "heavy")


class ConfigError(DomainError):
    pass


@dataclass(frozen=True)
class SignalSpec:
    position: float
    plan: SignalPlan


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "corridor"
    demand: str = "medium"
    seed: int = 1
    dt: float = 0.1
    duration: float = 600.0
    warmup: float = 120.0
    rates: dict = field(default_factory=lambda: {"light": 400.0, "medium": 700.0, "heavy": 1000.0})
    route_shares: dict = field(default_factory=lambda: {"main": 1.0, "ramp": 0.3, "side": 0.2})
    metric_routes: tuple = ("main", "ramp")
    alpha: float = 0.5
    pt_policy: str | None = None  # None: rule-based for baseline, Pareto table otherwise
    equivalence: float = 2.5
    strict: bool = True
    entry_retry: float = 0.5  # s between corridor admission attempts of a waiting vehicle
    priority: dict = field(default_factory=lambda: {1: "main", 3: "side"})
    layout: CorridorLayout = field(default_factory=default_layout)
    bounds: ControlBounds = ControlBounds()
    safety: SafetyGapModel = SafetyGapModel()
    driver: DriverParams = DriverParams()
    yield_rule: YieldRule = YieldRule()
    signal: SignalSpec | None = None
    coordination: CoordinationParams = CoordinationParams()
    powertrain: Powertrain = DEFAULT_POWERTRAIN

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.demand not in self.rates:
            raise ConfigError(f"no rate for demand level {self.demand!r}")
        if not 0.0 < self.dt <= 0.5:
            raise ConfigError("dt must lie in (0, 0.5]")
        if self.duration <= 0.0 or self.warmup < 0.0:
            raise ConfigError("duration must be positive and warmup nonnegative")
        if any(r < 0.0 for r in self.rates.values()):
            raise ConfigError("arrival rates must be nonnegative")
        names = {r.name for r in self.layout.routes}
        if set(self.route_shares) - names:
            raise ConfigError(f"shares for unknown routes {sorted(set(self.route_shares) - names)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.pt_policy not in (None, "baseline", "pareto"):
            raise ConfigError(f"unknown powertrain policy {self.pt_policy!r}")
        if self.driver.time_headway < self.safety.time_headway:
            raise ConfigError("driver headway must not be below the safety headway")

    @property
    def rate(self) -> float:
        return float(self.rates[self.demand])

    @property
    def powertrain_policy(self) -> str:
        if self.pt_policy is not None:
            return self.pt_policy
        return "baseline" if self.scenario == "baseline" else "pareto"

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)


# --------------------------------------------------------------------------
# JSON round trip


def layout_to_dict(layout: CorridorLayout) -> dict:
    return {
        "total_length": layout.total_length,
        "zones": [{
            "id": z.id, "name": z.name, "entry": z.entry, "length": z.length,
            "control_length": z.control_length, "desired_speed": z.desired_speed,
            "conflicts": sorted(sorted(pair) for pair in z.conflicts),
            "hold_speed": z.hold_speed,
        } for z in layout.zones],
        "routes": [asdict(r) | {"zones": list(r.zones)} for r in layout.routes],
        "speed_profile": [list(bp) for bp in layout.speed_profile],
    }


def layout_from_dict(d: dict) -> CorridorLayout:
    zones = tuple(Zone(z["id"], z["name"], z["entry"], z["length"], z["control_length"],
                       z["desired_speed"],
                       frozenset(frozenset(pair) for pair in z.get("conflicts", [])),
                       z.get("hold_speed", False)) for z in d["zones"])
    routes = tuple(Route(r["name"], r["origin"], r["exit"], tuple(r["zones"]),
                         r.get("approach_lane", "main"), r.get("join_position"),
                         r.get("approach_speed")) for r in d["routes"])
    profile = tuple((float(a), float(b)) for a, b in d["speed_profile"])
    return CorridorLayout(d["total_length"], zones, routes, profile)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {
        "scenario": cfg.scenario, "demand": cfg.demand, "seed": cfg.seed, "dt": cfg.dt,
        "duration": cfg.duration, "warmup": cfg.warmup, "rates": dict(cfg.rates),
        "route_shares": dict(cfg.route_shares), "metric_routes": list(cfg.metric_routes),
        "alpha": cfg.alpha, "pt_policy": cfg.pt_policy, "equivalence": cfg.equivalence,
        "strict": cfg.strict, "entry_retry": cfg.entry_retry,
        "priority": {str(k): v for k, v in cfg.priority.items()},
        "corridor": layout_to_dict(cfg.layout),
        "bounds": asdict(cfg.bounds), "safety": asdict(cfg.safety),
        "driver": asdict(cfg.driver), "yield": asdict(cfg.yield_rule),
        "signal": None if cfg.signal is None else {"position": cfg.signal.position,
                                                    **asdict(cfg.signal.plan)},
        "coordination": asdict(cfg.coordination),
        "vehicle": asdict(cfg.powertrain.vehicle), "limits": asdict(cfg.powertrain.limits),
    }
    return out


def _sub(cls, d: dict | None, default):
    if d is None:
        return default
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def schema() -> dict:
    text = resources.files("caphev").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def config_from_dict(d: dict) -> ScenarioConfig:
    validate(d)
    try:
        return _build(d)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _build(d: dict) -> ScenarioConfig:
    base = ScenarioConfig()
    kw: dict[str, Any] = {}
    for key in ("scenario", "demand", "seed", "dt", "duration", "warmup", "alpha",
                "pt_policy", "equivalence", "strict", "entry_retry"):
        if key in d:
            kw[key] = d[key]
    if "rates" in d:
        kw["rates"] = {k: float(v) for k, v in d["rates"].items()}
    if "route_shares" in d:
        kw["route_shares"] = {k: float(v) for k, v in d["route_shares"].items()}
    if "metric_routes" in d:
        kw["metric_routes"] = tuple(d["metric_routes"])
    if "priority" in d:
        kw["priority"] = {int(k): v for k, v in d["priority"].items()}
    if d.get("corridor") is not None:
        kw["layout"] = layout_from_dict(d["corridor"])
    kw["bounds"] = _sub(ControlBounds, d.get("bounds"), base.bounds)
    kw["safety"] = _sub(SafetyGapModel, d.get("safety"), base.safety)
    kw["driver"] = _sub(DriverParams, d.get("driver"), base.driver)
    kw["yield_rule"] = _sub(YieldRule, d.get("yield"), base.yield_rule)
    kw["coordination"] = _sub(CoordinationParams, d.get("coordination"), base.coordination)
    if d.get("signal") is not None:
        s = dict(d["signal"])
        pos = s.pop("position")
        kw["signal"] = SignalSpec(pos, SignalPlan(**s))
    vehicle = _sub(VehicleParams, d.get("vehicle"), base.powertrain.vehicle)
    limits = _sub(PowertrainLimits, d.get("limits"), base.powertrain.limits)
    kw["powertrain"] = Powertrain(vehicle, limits)
    return ScenarioConfig(**kw)


def load_config(path: str | Path | None = None, **overrides) -> ScenarioConfig:
    """Read a JSON scenario file (defaults if ``path`` is None) and apply overrides."""
    d: dict = {}
    if path is not None:
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d)
