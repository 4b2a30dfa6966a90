"""Perturbation initialization by adaptive search over placement and scale.

The perturbation starts life as a zero-padded copy of the command audio,
scaled by the smallest factor on a fixed grid that every surrogate already
transcribes as the target.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio import AudioClip
from .errors import LengthMismatch, NoFeasibleInit, PositionOutOfRange

logger = logging.getLogger(__name__)

_NORM_TOL = 1e-12


class Stage(str, enum.Enum):
    INIT = "INIT"
    INNER = "INNER"
    OUTER = "OUTER"


@dataclass(frozen=True, eq=False)
class Perturbation:
    """An additive, carrier-aligned perturbation and the stage that produced it."""

    delta: np.ndarray
    stage: Stage
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.array(self.delta, dtype=np.float64).reshape(-1)
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    def __len__(self):
        return self.delta.size


@dataclass(frozen=True)
class InitConfig:
    stride: float = 0.05
    mu_max: float = 1.0
    position_stride: int = 160

    def __post_init__(self):
        if not self.stride > 0:
            raise ValueError("search stride must be positive")
        if not self.mu_max >= self.stride:
            raise ValueError("mu_max must be at least the search stride")
        if int(self.position_stride) < 1:
            raise ValueError("position_stride must be >= 1")

    @property
    def max_steps(self) -> int:
        # scales are k * stride for k = 1..max_steps
        return int(np.floor(self.mu_max / self.stride + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


def pad_command(command_audio, carrier_length: int, position: int) -> np.ndarray:
    """Place the command at ``position`` inside a zero sequence of ``carrier_length``."""
    cmd = np.asarray(getattr(command_audio, "samples", command_audio), dtype=np.float64)
    if not 0 <= position <= carrier_length - cmd.size:
        raise PositionOutOfRange(
            f"position {position} outside [0, {carrier_length - cmd.size}]")
    out = np.zeros(carrier_length)
    out[position:position + cmd.size] = cmd
    return out


def _members(ensemble):
    return list(getattr(ensemble, "members", ensemble))


def _accepted_by_all(models, x: np.ndarray, target: str) -> bool:
    from .surrogates.ensemble import validate_on_all
    return validate_on_all(models, x, target)


def ada_search(carrier: AudioClip, target: str, command_audio: AudioClip, ensemble,
               config: InitConfig | None = None) -> Perturbation:
    """Find the smallest accepted scale, breaking ties by the earliest position.

    Positions are visited in increasing order. At each one the scale climbs in
    ``stride`` steps but gives up as soon as it would no longer beat the best
    scale found so far, so later positions only win with strictly smaller scales.
    """
    cfg = config or InitConfig()
    x, xt = carrier.samples, command_audio.samples
    if carrier.sample_rate != command_audio.sample_rate:
        raise LengthMismatch("carrier and command audio have different sample rates")
    if xt.size > x.size:
        raise LengthMismatch(f"command audio ({xt.size}) longer than carrier ({x.size})")
    if np.max(np.abs(x)) > 0.5 + _NORM_TOL or np.max(np.abs(xt)) > 0.5 + _NORM_TOL:
        raise ValueError("carrier and command audio must be normalized to [-0.5, 0.5]")
    models = _members(ensemble)

    best_k, best_i = cfg.max_steps + 1, None
    n_checks = 0
    for i in range(0, x.size - xt.size + 1, cfg.position_stride):
        padded = pad_command(xt, x.size, i)
        k = 1
        limit = best_k - 1 if best_i is not None else cfg.max_steps
        while k <= limit:
            n_checks += 1
            if _accepted_by_all(models, x + (k * cfg.stride) * padded, target):
                best_k, best_i = k, i
                break
            k += 1
    logger.info("ada_search: %d acceptance checks", n_checks)
    if best_i is None:
        raise NoFeasibleInit(
            f"no placement accepted by all {len(models)} surrogates with scale <= {cfg.mu_max}")
    mu = best_k * cfg.stride
    return Perturbation(mu * pad_command(xt, x.size, best_i), Stage.INIT,
                        {"position": best_i, "mu": mu, "mu_steps": best_k})
