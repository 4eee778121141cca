"""Environment configuration, reward weights and curriculum stages."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError, ParseError

Range = tuple  # (lo, hi)


def _check_range(name, r):
    if len(r) != 2 or not (math.isfinite(r[0]) and math.isfinite(r[1])) or r[0] > r[1]:
        raise ConfigError(f"{name}: range must be (min, max) with min <= max, got {r!r}")


@dataclass(frozen=True)
class Randomization:
    mass_scale: Range = (0.8, 1.2)
    kp_offset: Range = (-20.0, 20.0)
    foot_contact_x: Range = (-0.006, 0.006)
    foot_contact_y: Range = (-0.003, 0.003)
    foot_contact_z: Range = (-0.003, 0.003)
    com_offset: Range = (-0.015, 0.015)
    imu_displacement: Range = (-0.006, 0.006)
    imu_tilt: Range = (-0.06, 0.06)
    terrain_height: Range = (0.0, 0.02)


@dataclass(frozen=True)
class Disturbances:
    kick_interval: int = 50
    kick_velocity: Range = (0.2, 0.45)
    small_kick_interval: int = 10
    small_kick_velocity: Range = (0.05, 0.1)
    obs_noise: float = 0.03


@dataclass(frozen=True)
class Latency:
    obs_sigma_s: float = 0.01
    action_delays: tuple = (0, 1, 2)


@dataclass(frozen=True)
class Filters:
    action_cutoff_hz: float = 8.0
    obs_cutoff_hz: float = 10.0
    deadband: float = 0.0
    enabled: bool = True


@dataclass(frozen=True)
class Commands:
    lin_x: Range = (-0.4, 0.4)
    lin_y: Range = (-0.2, 0.2)
    yaw: Range = (-0.5, 0.5)
    zero_prob: float = 0.1
    resample_steps: int = 250


@dataclass(frozen=True)
class RewardWeights:
    tracking_lin_vel: float = 1.0
    tracking_ang_vel: float = 0.5
    ang_vel_xy: float = 0.05
    orientation: float = 1.0
    torques: float = 2e-4
    action_rate: float = 0.01
    feet_air_time: float = 2.0
    foot_slip: float = 0.1
    feet_phase: float = 1.0
    stand_still: float = -1.0
    termination: float = 1.0
    sigma_lin: float = 0.25
    sigma_ang: float = 0.25
    sigma_phase: float = 0.03
    t_thresh: float = 0.2
    cmd_eps: float = 0.05
    gait_hz: float = 1.9
    swing_height: float = 0.04
    t_max: float = 20.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ConfigError(f"rewards.{f.name}: must be finite")
        for s in ("sigma_lin", "sigma_ang", "sigma_phase"):
            if not getattr(self, s) > 0:
                raise ConfigError(f"rewards.{s}: must be > 0")


TERMS = ("tracking_lin_vel", "tracking_ang_vel", "ang_vel_xy", "orientation", "torques",
         "action_rate", "feet_air_time", "foot_slip", "feet_phase", "stand_still", "termination")

STAGE_TERMS = {
    1: ("ang_vel_xy", "orientation", "torques", "action_rate", "stand_still", "termination"),
    2: ("ang_vel_xy", "orientation", "torques", "action_rate", "stand_still", "termination"),
    3: ("ang_vel_xy", "orientation", "torques", "action_rate", "foot_slip", "stand_still",
        "termination"),
    4: TERMS,
}

# disturbance and randomization channels switched on by each stage
STAGE_CHANNELS = {
    1: ("mass", "kp", "com", "imu_displacement", "imu_tilt", "obs_noise", "obs_latency",
        "action_latency"),
    2: ("small_kicks", "kicks"),
    3: ("terrain", "contact_offset"),
    4: ("commands",),
}


@dataclass(frozen=True)
class EnvConfig:
    stage: int = 4
    seed: int = 0
    ctrl_dt: float = 0.02
    sim_dt: float = 0.004
    history: int = 3
    randomization: Randomization = field(default_factory=Randomization)
    disturbances: Disturbances = field(default_factory=Disturbances)
    latency: Latency = field(default_factory=Latency)
    filters: Filters = field(default_factory=Filters)
    commands: Commands = field(default_factory=Commands)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    channels: tuple = ()
    reward_terms: tuple = TERMS
    contact_threshold: float = 0.01
    tilt_limit: float = 0.8

    def __post_init__(self):
        if self.stage not in (1, 2, 3, 4):
            raise ConfigError(f"stage must be 1..4, got {self.stage}")
        if not (self.ctrl_dt > 0 and self.sim_dt > 0):
            raise ConfigError("time steps must be > 0")
        ratio = self.ctrl_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("ctrl_dt must be an integer multiple of sim_dt")
        if self.history < 1:
            raise ConfigError("history must be >= 1")
        for group in (self.randomization, self.disturbances, self.commands):
            for f in fields(group):
                v = getattr(group, f.name)
                if isinstance(v, tuple):
                    _check_range(f.name, v)
        if self.disturbances.obs_noise < 0:
            raise ConfigError("obs_noise must be >= 0")
        if self.latency.obs_sigma_s < 0:
            raise ConfigError("obs_sigma_s must be >= 0")
        if not self.latency.action_delays or min(self.latency.action_delays) < 0:
            raise ConfigError("action_delays must be non-negative step counts")
        nyq = 0.5 / self.ctrl_dt
        for name in ("action_cutoff_hz", "obs_cutoff_hz"):
            fc = getattr(self.filters, name)
            if not 0 < fc < nyq:
                raise ConfigError(f"filters.{name}={fc} outside (0, {nyq})")
        if not self.channels:
            object.__setattr__(self, "channels", active_channels(self.stage))
            object.__setattr__(self, "reward_terms", STAGE_TERMS[self.stage])

    @property
    def n_substeps(self) -> int:
        return int(round(self.ctrl_dt / self.sim_dt))

    def has(self, channel) -> bool:
        return channel in self.channels

    def to_dict(self) -> dict:
        return asdict(self)


def active_channels(stage: int) -> tuple:
    out = []
    for s in range(1, stage + 1):
        out.extend(STAGE_CHANNELS[s])
    return tuple(out)


def curriculum_stage(config: EnvConfig, stage_id: int) -> EnvConfig:
    """Config for curriculum stage 1..4; channels accumulate with the stage."""
    if stage_id not in (1, 2, 3, 4):
        raise ConfigError(f"unknown curriculum stage {stage_id!r}")
    return replace(config, stage=stage_id, channels=active_channels(stage_id),
                   reward_terms=STAGE_TERMS[stage_id])


def _tuples(d):
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}


def env_config_from_dict(doc: dict, **overrides) -> EnvConfig:
    if doc.get("format_version") != 1:
        raise ConfigError(f"format_version: expected 1, got {doc.get('format_version')!r}")
    try:
        rnd = dict(doc.get("randomization", {}))
        fco = rnd.pop("foot_contact_offset_m", {})
        renamed = {"mass_scale": "mass_scale", "kp_offset": "kp_offset",
                   "com_offset_m": "com_offset", "imu_displacement_m": "imu_displacement",
                   "imu_tilt_rad": "imu_tilt", "terrain_height_m": "terrain_height"}
        rkw = {renamed[k]: tuple(v) for k, v in rnd.items()}
        for ax in ("x", "y", "z"):
            if ax in fco:
                rkw[f"foot_contact_{ax}"] = tuple(fco[ax])
        dist = dict(doc.get("disturbance", {}))
        dkw = {"kick_interval": int(dist.get("kick_interval", 50)),
               "kick_velocity": tuple(dist.get("kick_velocity_mps", (0.2, 0.45))),
               "small_kick_interval": int(dist.get("small_kick_interval", 10)),
               "small_kick_velocity": tuple(dist.get("small_kick_velocity_mps", (0.05, 0.1))),
               "obs_noise": float(dist.get("obs_noise", 0.03))}
        lat = doc.get("latency", {})
        lkw = {"obs_sigma_s": float(lat.get("obs_sigma_s", 0.01)),
               "action_delays": tuple(int(v) for v in lat.get("action_delays", (0, 1, 2)))}
        flt = doc.get("filters", {})
        fkw = {"action_cutoff_hz": float(flt.get("action_cutoff_hz", 8.0)),
               "obs_cutoff_hz": float(flt.get("obs_cutoff_hz", 10.0)),
               "deadband": float(flt.get("deadband_rad", 0.0)),
               "enabled": bool(flt.get("enabled", True))}
        rw = dict(doc.get("rewards", {}))
        wkw = dict(rw.pop("weights", {}))
        keymap = {"t_thresh_s": "t_thresh", "t_max_s": "t_max", "swing_height_m": "swing_height"}
        wkw.update({keymap.get(k, k): v for k, v in rw.items()})
        cfg = EnvConfig(
            stage=int(doc.get("stage", 4)), seed=int(doc.get("seed", 0)),
            ctrl_dt=float(doc.get("ctrl_dt_s", 0.02)), sim_dt=float(doc.get("sim_dt_s", 0.004)),
            history=int(doc.get("history", 3)),
            randomization=Randomization(**rkw), disturbances=Disturbances(**dkw),
            latency=Latency(**lkw), filters=Filters(**fkw),
            commands=Commands(**_tuples(doc.get("commands", {}))),
            rewards=RewardWeights(**{k: float(v) for k, v in wkw.items()}))
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad environment config: {exc}") from exc
    stage = overrides.pop("stage", cfg.stage)
    cfg = replace(cfg, **overrides) if overrides else cfg
    return curriculum_stage(cfg, stage)


def load_env_config(path=None, **overrides) -> EnvConfig:
    if path is None:
        path = Path(__file__).resolve().parents[1] / "data" / "env_default.json"
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return env_config_from_dict(doc, **overrides)
