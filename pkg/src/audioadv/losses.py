"""Composite attack loss: adversarial + c1 * imperceptibility + c2 * acoustic feature.

Each term comes with an exact gradient w.r.t. the perturbation. Norm terms use
the zero subgradient at the origin.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .audio import ArrayLike, MFCCConfig, as_array, torch_mfcc
from .errors import FrameCountMismatch, LengthMismatch
from .surrogates.base import SurrogateModel

DENOMINATOR_FLOOR = 1e-4


@dataclass(frozen=True)
class LossWeights:
    c1: float = 0.05
    c2: float = 0.01

    def __post_init__(self):
        for name in ("c1", "c2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    adversarial: float
    imperceptibility: float
    acoustic_feature: float

    @classmethod
    def combine(cls, adversarial: float, imperceptibility: float, acoustic_feature: float,
                weights: LossWeights) -> "LossBreakdown":
        total = adversarial + weights.c1 * imperceptibility + weights.c2 * acoustic_feature
        return cls(total, adversarial, imperceptibility, acoustic_feature)

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(carrier: ArrayLike, delta: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    x, d = as_array(carrier), as_array(delta)
    if x.shape != d.shape:
        raise LengthMismatch(f"carrier has {x.size} samples, perturbation {d.size}")
    return x, d


def stabilized_carrier(x: np.ndarray) -> np.ndarray:
    """sign(x) * max(|x|, floor), with sign(0) taken as +1."""
    sign = np.where(x < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(x), DENOMINATOR_FLOOR)


def imperceptibility_loss_and_grad(carrier: ArrayLike, delta: ArrayLike) -> tuple[float, np.ndarray]:
    x, d = _pair(carrier, delta)
    denom = stabilized_carrier(x)
    ratio = d / denom
    value = float(np.sqrt(np.dot(ratio, ratio)))
    if value == 0.0:
        return 0.0, np.zeros_like(d)
    return value, ratio / denom / value


def imperceptibility_loss(carrier: ArrayLike, delta: ArrayLike) -> float:
    """L2 norm of the element-wise perturbation-to-carrier ratio."""
    x, d = _pair(carrier, delta)
    ratio = d / stabilized_carrier(x)
    return float(np.sqrt(np.dot(ratio, ratio)))


class FeatureReference:
    """Precomputed MFCCs of the (carrier-length, zero-padded) command audio."""

    def __init__(self, command_audio: ArrayLike, config: MFCCConfig | None = None):
        self.config = config or MFCCConfig()
        ref = torch.from_numpy(np.array(as_array(command_audio), dtype=np.float64))
        with torch.no_grad():
            self.features = torch_mfcc(ref, self.config)
        self.length = ref.numel()

    def loss_and_grad(self, adversarial: np.ndarray, need_grad: bool = True) -> tuple[float, np.ndarray | None]:
        xp = torch.tensor(np.asarray(adversarial, dtype=np.float64), requires_grad=need_grad)
        feats = torch_mfcc(xp, self.config)
        if feats.shape != self.features.shape:
            raise FrameCountMismatch(
                f"adversarial example yields {tuple(feats.shape)} features, "
                f"command audio {tuple(self.features.shape)}")
        diff = feats - self.features
        value = torch.sqrt(torch.sum(diff * diff))
        if not need_grad:
            return float(value), None
        if value.item() == 0.0:
            return 0.0, np.zeros(xp.numel())
        (grad,) = torch.autograd.grad(value, xp)
        return value.item(), grad.numpy()


def acoustic_feature_loss(carrier: ArrayLike, delta: ArrayLike, command_audio: ArrayLike,
                          mfcc_config: MFCCConfig | None = None) -> float:
    """Frobenius distance between MFCCs of ``carrier + delta`` and of ``command_audio``."""
    x, d = _pair(carrier, delta)
    return FeatureReference(command_audio, mfcc_config).loss_and_grad(x + d, need_grad=False)[0]


def acoustic_feature_loss_and_grad(carrier, delta, command_audio, mfcc_config=None):
    x, d = _pair(carrier, delta)
    return FeatureReference(command_audio, mfcc_config).loss_and_grad(x + d)


class AttackLoss:
    """The weighted three-term loss bound to one carrier and one command reference.

    ``adversarial_only`` drops the two regularizers from the gradient (but
    not from the reported breakdown), for ablations.
    """

    def __init__(self, carrier: ArrayLike, command_reference: ArrayLike, weights: LossWeights | None = None,
                 mfcc_config: MFCCConfig | None = None, adversarial_only: bool = False):
        self.carrier = np.asarray(as_array(carrier), dtype=np.float64)
        self.weights = weights or LossWeights()
        self.reference = FeatureReference(command_reference, mfcc_config)
        if self.reference.length != self.carrier.size:
            raise LengthMismatch("command reference must be padded to the carrier length")
        self.adversarial_only = adversarial_only

    def breakdown(self, delta: ArrayLike, model: SurrogateModel, target: str,
                  adversarial: float | None = None) -> LossBreakdown:
        x, d = _pair(self.carrier, delta)
        if adversarial is None:
            adversarial = model.loss_value(x + d, model.tokenize(target))
        lp = imperceptibility_loss(x, d)
        lf, _ = self.reference.loss_and_grad(x + d, need_grad=False)
        return LossBreakdown.combine(float(adversarial), lp, lf, self.weights)

    def loss_and_grad(self, delta: ArrayLike, model: SurrogateModel, target: str) -> tuple[LossBreakdown, np.ndarray]:
        x, d = _pair(self.carrier, delta)
        la, g = model.loss_and_grad(x + d, model.tokenize(target))
        lp, gp = imperceptibility_loss_and_grad(x, d)
        lf, gf = self.reference.loss_and_grad(x + d)
        parts = LossBreakdown.combine(float(la), lp, lf, self.weights)
        if self.adversarial_only:
            return parts, np.asarray(g, dtype=np.float64)
        w = self.weights
        grad = np.asarray(g, dtype=np.float64)
        if w.c1:
            grad = grad + w.c1 * gp
        if w.c2:
            grad = grad + w.c2 * gf
        return parts, grad


def total_loss(carrier, delta, target, model, weights=None, mfcc_config=None, command_reference=None) -> LossBreakdown:
    """Breakdown of the composite loss; ``command_reference`` defaults to no command (zeros)."""
    x = as_array(carrier)
    ref = np.zeros_like(x) if command_reference is None else command_reference
    return AttackLoss(x, ref, weights, mfcc_config).breakdown(delta, model, target)


def total_loss_gradient(carrier, delta, target, model, weights=None, mfcc_config=None,
                        command_reference=None) -> np.ndarray:
    x = as_array(carrier)
    ref = np.zeros_like(x) if command_reference is None else command_reference
    return AttackLoss(x, ref, weights, mfcc_config).loss_and_grad(delta, model, target)[1]
