"""Attack configuration and its strict JSON form."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .audio import MFCCConfig
from .errors import ConfigError
from .initialization import InitConfig
from .losses import LossWeights

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AttackConfig:
    """Every knob of the attack. None of the defaults come with a guarantee;
    they are starting points, and every run echoes them into its report."""

    alpha: float = 0.001
    epsilon: float = 0.05
    eta: float = 0.3
    sigma_std: float = 0.001
    max_steps: int = 1000
    weights: LossWeights = field(default_factory=LossWeights)
    init: InitConfig = field(default_factory=InitConfig)
    mfcc: MFCCConfig = field(default_factory=MFCCConfig)
    seed: int = 0
    fresh_noise_per_delta: bool = False
    adversarial_only_gradient: bool = False
    stop_after_first_valid: bool = False
    # drop valid examples whose PCM16 rendering no longer transcribes as the target
    require_pcm16_valid: bool = True

    def __post_init__(self):
        for name, cls in _NESTED.items():
            value = getattr(self, name)
            if isinstance(value, dict):
                _reject_unknown(value, cls, f"config.{name}")
                try:
                    object.__setattr__(self, name, cls(**value))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(str(exc)) from exc
            elif not isinstance(value, cls):
                raise ConfigError(f"config.{name} must be a {cls.__name__} or an object")
        for name in ("alpha", "epsilon", "eta", "sigma_std"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta must lie in [0, 1]")
        if self.sigma_std < 0:
            raise ConfigError("sigma_std must be >= 0")
        if isinstance(self.max_steps, bool) or not isinstance(self.max_steps, int) or self.max_steps < 1:
            raise ConfigError(f"max_steps must be an integer >= 1, got {self.max_steps!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AttackConfig":
        """Build from a dict, rejecting unknown keys at every level."""
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        _reject_unknown(data, cls, "config")
        for key in _NESTED:
            if key in data and not isinstance(data[key], dict):
                raise ConfigError(f"config.{key} must be an object")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "AttackConfig":
        data = self.to_dict()
        data.update({k: asdict(v) if is_dataclass(v) else v for k, v in changes.items()})
        return AttackConfig.from_dict(data)


_NESTED = {"weights": LossWeights, "init": InitConfig, "mfcc": MFCCConfig}


def _reject_unknown(data: dict, cls, where: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")


def load_config(path) -> AttackConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return AttackConfig.from_dict(data)
