"""Scenario configuration files (TOML).

Every section maps onto one parameter dataclass; unknown keys are errors.
File paths inside a scenario are resolved relative to the scenario file.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import LATERAL_GAINS, LONGITUDINAL_GAINS, ActuatorLimits, PidGains
from .kinematics import KbmParams
from .mpc import MpcConfig
from .vehicle import PlantParams, TireCoefficients
from .velocity import VelocityPlannerConfig


class ConfigError(ValueError):
    pass


def load_toml(filename: str | Path) -> dict:
    filename = Path(filename)
    try:
        with filename.open("rb") as f:
            return tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read {filename}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{filename}: {exc}") from exc


def reject_unknown(data: dict, allowed, where: str) -> None:
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _build(cls, data: dict | None, where: str, **nested):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    reject_unknown(data, names, where)
    for key, sub_cls in nested.items():
        if key in data:
            data[key] = _build(sub_cls, data[key], f"{where}.{key}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ActuatorConfig:
    drive_torque: float = 800.0  # N m per front wheel
    brake_torque: float = 550.0  # N m per wheel
    steer_rate_scale: float = 3.0  # steering slew limit as a multiple of the u2 bound


@dataclass(frozen=True)
class ScenarioConfig:
    track: Path
    obstacles: Path | None = None
    name: str = "scenario"
    duration: float = 60.0  # s
    initial_speed: float = 15.0  # m/s
    seed: int = 0  # reserved, the core is deterministic
    resample_spacing: float = 1.0  # m
    plant_dt: float = 1e-3
    control_dt: float = 1e-2
    planner_dt: float = 1e-1
    plant: PlantParams = field(default_factory=PlantParams)
    kinematics: KbmParams = field(default_factory=KbmParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    velocity: VelocityPlannerConfig = field(default_factory=VelocityPlannerConfig)
    longitudinal: PidGains = LONGITUDINAL_GAINS
    lateral: PidGains = LATERAL_GAINS
    actuators: ActuatorConfig = field(default_factory=ActuatorConfig)

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.initial_speed < 0:
            raise ConfigError("initial_speed must be non-negative")
        _ratio(self.control_dt, self.plant_dt, "control_dt / plant_dt")
        _ratio(self.planner_dt, self.control_dt, "planner_dt / control_dt")

    @property
    def control_every(self) -> int:
        return _ratio(self.control_dt, self.plant_dt, "")

    @property
    def planner_every(self) -> int:
        """Controller updates per planner cycle."""
        return _ratio(self.planner_dt, self.control_dt, "")

    def actuator_limits(self) -> ActuatorLimits:
        a = self.actuators
        return ActuatorLimits(drive_torque=a.drive_torque, brake_torque=a.brake_torque,
                              delta_mech=self.kinematics.delta_mech,
                              steer_rate=self.mpc.u2_max * a.steer_rate_scale)


def _ratio(big: float, small: float, what: str) -> int:
    if big <= 0 or small <= 0:
        raise ConfigError(f"{what}: rates must be positive")
    n = round(big / small)
    if n < 1 or not math.isclose(n * small, big, rel_tol=1e-9):
        raise ConfigError(f"{what}: {big} is not an integer multiple of {small}")
    return int(n)


_SCENARIO_KEYS = {"track", "obstacles", "name", "duration", "initial_speed", "seed",
                  "resample_spacing", "plant_dt", "control_dt", "planner_dt"}
_SECTIONS = {"plant", "kinematics", "mpc", "velocity", "control", "actuators"}


def scenario_from_dict(data: dict, base_dir: Path = Path(".")) -> ScenarioConfig:
    reject_unknown(data, {"scenario"} | _SECTIONS, "scenario file")
    top = dict(data.get("scenario", {}))
    reject_unknown(top, _SCENARIO_KEYS, "[scenario]")
    if "track" not in top:
        raise ConfigError("[scenario]: 'track' is required")
    top["track"] = _resolve(base_dir, top["track"])
    if top.get("obstacles"):
        top["obstacles"] = _resolve(base_dir, top["obstacles"])
    else:
        top["obstacles"] = None

    control = dict(data.get("control", {}))
    reject_unknown(control, {"longitudinal", "lateral"}, "[control]")
    kwargs = dict(
        plant=_build(PlantParams, data.get("plant"), "[plant]", tire=TireCoefficients),
        kinematics=_build(KbmParams, data.get("kinematics"), "[kinematics]"),
        mpc=_build(MpcConfig, data.get("mpc"), "[mpc]"),
        velocity=_build(VelocityPlannerConfig, data.get("velocity"), "[velocity]"),
        actuators=_build(ActuatorConfig, data.get("actuators"), "[actuators]"),
    )
    if "longitudinal" in control:
        kwargs["longitudinal"] = _build(PidGains, {**_gains_dict(LONGITUDINAL_GAINS),
                                                   **control["longitudinal"]},
                                        "[control.longitudinal]")
    if "lateral" in control:
        kwargs["lateral"] = _build(PidGains, {**_gains_dict(LATERAL_GAINS), **control["lateral"]},
                                   "[control.lateral]")
    cfg = ScenarioConfig(**top, **kwargs)
    if not cfg.track.is_file():
        raise ConfigError(f"track file not found: {cfg.track}")
    if cfg.obstacles is not None and not cfg.obstacles.is_file():
        raise ConfigError(f"obstacle file not found: {cfg.obstacles}")
    return cfg


def _gains_dict(g: PidGains) -> dict:
    return dataclasses.asdict(g)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else (base / p).resolve()


def load_scenario(filename: str | Path) -> ScenarioConfig:
    filename = Path(filename)
    return scenario_from_dict(load_toml(filename), filename.resolve().parent)
