"""Run configuration: episode dispersions, scenario, reward constants, trainer defaults.

A run-configuration file is YAML with up to five top-level sections
(``episode``, ``scenario``, ``rewards``, ``trainer``, ``evaluation``).  Every
key is optional; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class EpisodeConfig:
    downrange: tuple[float, float] = (1500.0, 2000.0)
    crossrange: tuple[float, float] = (-500.0, 500.0)
    altitude: tuple[float, float] = (2000.0, 2200.0)
    speed: tuple[float, float] = (40.0, 50.0)
    heading_error_deg: tuple[float, float] = (0.0, 10.0)
    attitude_error_deg: tuple[float, float] = (0.0, 10.0)
    mass: tuple[float, float] = (1900.0, 2000.0)
    mass_nominal: float = 1950.0
    dj_diag: float = 10.0
    dj_off: float = 1.0
    tau_seeker: float = 0.2
    tau_ctrl: float = 0.2
    f_max: float = 200.0
    com_alpha: float = 0.1
    divert_thresholds: tuple[float, ...] = (1500.0, 1000.0, 500.0, 100.0)
    divert_fractions: tuple[float, float, float] = (0.1, 0.1, 0.05)
    reset_period: float = 2.0
    switch_altitude: float = 5.0
    failure_probability: float = 0.5
    max_steps: int = 3000


@dataclass
class RewardParams:
    alpha: float = -0.5
    beta: float = -0.01
    eta: float = 0.01
    kappa: float = 20.0
    attitude_limit_deg: float = 85.0
    attitude_penalty: float = -100.0
    sigma_l: float = 5.0
    terminal_radius: float = 10.0
    terminal_speed: float = 2.0
    landing_attitude_deg: float = 10.0
    landing_rate_deg: float = 10.0
    landing_glideslope_deg: float = 80.0


_SCENARIO_RE = re.compile(r"^\s*(optim|af|mv|djdiag|dj)\s*(?:[=(]\s*([-+0-9.eE]+)\s*\)?)?\s*$", re.I)


@dataclass(frozen=True)
class Scenario:
    """Evaluation scenario: ``Optim``, ``AF(Δ)``, ``MV(Δ)`` or ``dJdiag(Δ)``."""

    label: str = "Optim"
    delta: float | None = None

    def __post_init__(self):
        if self.label not in ("Optim", "AF", "MV", "dJdiag"):
            raise ConfigError(f"unknown scenario label {self.label!r}")
        if self.label != "Optim" and self.delta is None:
            raise ConfigError(f"scenario {self.label} needs a delta")
        if self.label == "AF" and not 0.0 < self.delta <= 1.0:
            raise ConfigError("AF delta must lie in (0, 1]")
        if self.label in ("MV", "dJdiag") and self.delta < 0.0:
            raise ConfigError(f"{self.label} delta must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        m = _SCENARIO_RE.match(text)
        if not m:
            raise ConfigError(f"cannot parse scenario {text!r}")
        key = m.group(1).lower()
        label = {"optim": "Optim", "af": "AF", "mv": "MV", "djdiag": "dJdiag", "dj": "dJdiag"}[key]
        delta = float(m.group(2)) if m.group(2) is not None else None
        return cls(label, delta)

    def __str__(self) -> str:
        return self.label if self.delta is None else f"{self.label}={self.delta:g}"


@dataclass
class TrainerConfig:
    gamma: float = 0.995
    clip_eps: float = 0.2
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    kl_target: float = 1e-3
    kl_high: float = 2.0
    kl_low: float = 0.5
    lr_down: float = 0.5
    lr_up: float = 1.5
    lr_bounds: tuple[float, float] = (1e-6, 1e-2)
    eps_bounds: tuple[float, float] = (0.05, 0.3)
    episodes_per_batch_guidance: int = 60
    episodes_per_batch_landing: int = 120
    total_episodes_guidance: int = 60_000
    total_episodes_landing: int = 300_000
    epochs: int = 3
    minibatch_episodes: int = 30
    optimizer: str = "adam"
    normalize_advantages: bool = True
    scale_value_targets: bool = True
    max_grad_norm: float = 5.0
    ic_pool_size: int = 5000
    init_log_std: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not self.clip_eps > 0.0 or not self.kl_target > 0.0:
            raise ConfigError("clip_eps and kl_target must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")


@dataclass
class EvaluationConfig:
    episodes: int = 5000
    deterministic: bool = True


@dataclass
class RunConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    scenario: Scenario = field(default_factory=Scenario)
    rewards: RewardParams = field(default_factory=RewardParams)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["scenario"] = str(self.scenario)
        return _lists(d)


def _lists(obj):
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k) if k in fields else None
        if isinstance(default, tuple):
            v = tuple(float(x) for x in v)
        elif isinstance(default, bool):
            v = bool(v)
        elif isinstance(default, int):
            v = int(v)
        elif isinstance(default, float):
            v = float(v)
        kwargs[k] = v
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any] | None) -> RunConfig:
    data = dict(data or {})
    sections = {"episode": EpisodeConfig, "rewards": RewardParams,
                "trainer": TrainerConfig, "evaluation": EvaluationConfig}
    unknown = set(data) - set(sections) - {"scenario"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kw: dict[str, Any] = {name: _build(cls, data[name], name)
                          for name, cls in sections.items() if name in data}
    if "scenario" in data:
        kw["scenario"] = Scenario.parse(str(data["scenario"]))
    return RunConfig(**kw)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(yaml.safe_load(fh))


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
