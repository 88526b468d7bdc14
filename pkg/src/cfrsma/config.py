"""Experiment configuration: dataclasses, JSON ingestion, strict validation.

The defaults reproduce the reference radio setup at desk scale, so an empty
config (or one containing only overrides) is a valid experiment.  Unknown
fields are hard errors naming the offending dotted path; transmit powers are
given in dBm in configs and converted to watts exactly once, here.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .channel import ChannelParams

SCHEMA_VERSION = 1

MODES = ("fdrl-rsma", "drl-rsma-centralized", "fdrl-sdma", "fdrl-rsma-miso")


class ConfigError(ValueError):
    """Malformed configuration; message names the offending field."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class NetworkConfig:
    n_ap: int = 2
    n_ue: int = 4
    m_ap: int = 4
    m_ue: int = 2
    p_max_dbm: float = 30.0
    n_ue_max: int = 4
    area_side_m: float = 1000.0


@dataclass
class TrainingConfig:
    episodes: int = 300
    steps_per_episode: int = 50
    t_fl: int = 10
    gamma: float = 0.99
    tau: float = 1e-3
    target_update_interval: int = 1
    lr: float = 1e-3
    actor_lr: float = 7e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 2.0
    batch_size: int = 64
    replay_capacity: int = 20000
    noise_start: float = 0.2
    noise_end: float = 0.02
    finetune_noise_start: float = 0.05
    finetune_noise_end: float = 0.005
    redraws: int = 1


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    mode: str = "fdrl-rsma"
    seed: int = 0
    deterministic: bool = True
    network: NetworkConfig = field(default_factory=NetworkConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @property
    def p_max_w(self) -> float:
        return dbm_to_watts(self.network.p_max_dbm)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"network": NetworkConfig, "channel": ChannelParams,
             "training": TrainingConfig}
_SCALARS = {"schema_version", "mode", "seed", "deterministic"}


def _fill_section(cls, data: dict, prefix: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config field: {prefix}.{key}")
        want = fields[key].type
        if want in ("int",) and isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"config field {prefix}.{key} must be an integer")
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    """Build a validated config from parsed JSON; unknown fields are fatal."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    cfg = ExperimentConfig()
    explicit_m_ue = isinstance(data.get("network"), dict) and \
        "m_ue" in data["network"]
    for key, value in data.items():
        if key in _SCALARS:
            setattr(cfg, key, value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key} must be an object")
            setattr(cfg, key, _fill_section(_SECTIONS[key], value, key))
        else:
            raise ConfigError(f"unknown config field: {key}")
    validate(cfg, explicit_m_ue=explicit_m_ue)
    return cfg


def from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(data)


def load(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())


def validate(cfg: ExperimentConfig, explicit_m_ue: bool = False) -> None:
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {cfg.schema_version} (expected {SCHEMA_VERSION})")
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("config field seed must be a non-negative integer")
    net, tr, ch = cfg.network, cfg.training, cfg.channel
    if cfg.mode == "fdrl-rsma-miso":
        if explicit_m_ue and net.m_ue != 1:
            raise ConfigError("config field network.m_ue must be 1 in mode fdrl-rsma-miso")
        net.m_ue = 1
    for name, val in (("network.n_ap", net.n_ap), ("network.n_ue", net.n_ue),
                      ("network.m_ap", net.m_ap), ("network.m_ue", net.m_ue),
                      ("network.n_ue_max", net.n_ue_max),
                      ("training.episodes", tr.episodes),
                      ("training.steps_per_episode", tr.steps_per_episode),
                      ("training.t_fl", tr.t_fl),
                      ("training.batch_size", tr.batch_size),
                      ("training.replay_capacity", tr.replay_capacity),
                      ("training.target_update_interval", tr.target_update_interval),
                      ("training.redraws", tr.redraws)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ConfigError(f"config field {name} must be a positive integer")
    if net.area_side_m <= 0:
        raise ConfigError("config field network.area_side_m must be positive")
    if not 0.0 < tr.gamma <= 1.0:
        raise ConfigError("config field training.gamma must lie in (0, 1]")
    if not 0.0 <= tr.tau <= 1.0:
        raise ConfigError("config field training.tau must lie in [0, 1]")
    if tr.lr <= 0:
        raise ConfigError("config field training.lr must be positive")
    if tr.actor_lr <= 0:
        raise ConfigError("config field training.actor_lr must be positive")
    if not 0.0 <= ch.epsilon <= 1.0:
        raise ConfigError("config field channel.epsilon must lie in [0, 1]")
    if ch.f_mhz <= 0 or ch.h_ap_m <= 0 or ch.h_ue_m < 0:
        raise ConfigError("config field channel.f_mhz/h_ap_m/h_ue_m out of domain")
    if ch.d_upper_km <= ch.d_lower_km or ch.d_lower_km <= 0:
        raise ConfigError("config field channel.d_upper_km must exceed d_lower_km > 0")
    if ch.nakagami_m <= 0 or ch.nakagami_omega <= 0:
        raise ConfigError("config field channel.nakagami_m/omega must be positive")
    if ch.bandwidth_hz <= 0 or ch.temperature_k <= 0:
        raise ConfigError("config field channel.bandwidth_hz/temperature_k must be positive")
