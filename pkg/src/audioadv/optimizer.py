"""Sequential ensemble optimization of the perturbation.

Each outer step shuffles the surrogates and runs an inner pass in which the
j-th surrogate averages its gradients over every perturbation produced so far
in that pass. The inner results are blended back into the running
perturbation, and the example is kept whenever all surrogates accept it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .audio import AudioClip, pcm16_roundtrip, snr_db
from .config import AttackConfig
from .errors import LengthMismatch, NonFiniteGradient
from .initialization import Perturbation, Stage, ada_search, pad_command
from .losses import AttackLoss, LossBreakdown
from .seeding import int_seed, rng_for
from .surrogates.base import SurrogateModel, matches_target, normalize_text
from .surrogates.ensemble import SurrogateEnsemble, validate_on_all

logger = logging.getLogger(__name__)


def clip_to_carrier(delta: np.ndarray, carrier: np.ndarray, epsilon: float) -> np.ndarray:
    """Element-wise bound |delta_i| <= epsilon * |x_i|."""
    bound = epsilon * np.abs(carrier)
    return np.maximum(np.minimum(delta, bound), -bound)


def inner_step(j: int, model: SurrogateModel, carrier: np.ndarray, deltas: Sequence[np.ndarray],
               target: str, config: AttackConfig, loss: AttackLoss,
               rng: np.random.Generator) -> Perturbation:
    """Update from ``deltas[0]`` using the mean gradient of ``model`` over all of ``deltas``.

    ``deltas`` is ``[delta_0, ..., delta_{j-1}]``. Gradients are taken at the
    noised points ``delta' + sigma`` but the step is always taken from delta_0.
    """
    if len(deltas) != j:
        raise ValueError(f"inner step {j} expects {j} input perturbations, got {len(deltas)}")
    n = carrier.size
    if any(np.shape(d) != (n,) for d in deltas):
        raise LengthMismatch("every input perturbation must match the carrier length")
    shared = None if config.fresh_noise_per_delta else rng.normal(0.0, config.sigma_std, n)
    total = np.zeros(n)
    first = None
    for d in deltas:
        noise = shared if shared is not None else rng.normal(0.0, config.sigma_std, n)
        parts, grad = loss.loss_and_grad(d + noise, model, target)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(
                f"non-finite gradient from {model.id} at inner step {j} "
                f"(loss breakdown {parts.to_dict()}, {int(np.sum(~np.isfinite(grad)))} bad samples)")
        first = first or parts
        total += grad
    updated = deltas[0] - config.alpha * (total / j)
    return Perturbation(clip_to_carrier(updated, carrier, config.epsilon), Stage.INNER,
                        {"j": j, "model": model.id, "loss_at_delta0": first.to_dict()})


def outer_update(deltas: Sequence[np.ndarray], delta0: np.ndarray, eta: float) -> Perturbation:
    """Blend the mean of the inner results with the starting perturbation."""
    if not deltas:
        raise ValueError("need at least one inner perturbation")
    acc = np.array(deltas[0], dtype=np.float64)
    for d in deltas[1:]:
        if np.shape(d) != acc.shape:
            raise LengthMismatch("inner perturbations differ in length")
        acc += d
    if np.shape(delta0) != acc.shape:
        raise LengthMismatch("delta_0 differs in length from the inner perturbations")
    mean = acc / len(deltas)
    return Perturbation(eta * mean + (1.0 - eta) * np.asarray(delta0), Stage.OUTER)


@dataclass
class StepRecord:
    step: int
    order: list[str]
    inner: list[Perturbation]
    delta: Perturbation
    valid: bool
    losses: dict[str, LossBreakdown]
    transcripts: dict[str, str]

    def trace_row(self) -> dict:
        return {
            "step": self.step,
            "order": self.order,
            "valid": self.valid,
            "losses": {k: v.to_dict() for k, v in self.losses.items()},
            "transcripts": self.transcripts,
        }


@dataclass(frozen=True, eq=False)
class ValidExample:
    """One member of the valid set. The clip is rebuilt on demand from the carrier."""

    carrier: np.ndarray
    delta: np.ndarray
    step: int
    snr_db: float
    survives_quantization: bool

    @property
    def clip(self) -> AudioClip:
        return AudioClip(self.carrier + self.delta)


@dataclass
class AttackResult:
    target: str
    carrier: AudioClip
    init: Perturbation
    valid_set: list[ValidExample]
    trace: list[dict]
    final_delta: Perturbation
    config: AttackConfig
    surrogate_ids: list[str] = field(default_factory=list)
    n_dropped_quantization: int = 0

    @property
    def best_snr(self) -> float | None:
        return max((e.snr_db for e in self.valid_set), default=None)


class SequentialEnsembleOptimizer:
    """Runs the outer loop one step at a time; see :meth:`steps`."""

    def __init__(self, carrier: AudioClip, target: str, models: Sequence[SurrogateModel],
                 config: AttackConfig, command_reference: np.ndarray):
        self.carrier = carrier.samples
        self.target = normalize_text(target)
        self.config = config
        self.ensemble = SurrogateEnsemble(list(models), rng_seed=int_seed(config.seed, "shuffle"))
        self.noise_rng = rng_for(config.seed, "noise")
        self.loss = AttackLoss(self.carrier, command_reference, config.weights, config.mfcc,
                               adversarial_only=config.adversarial_only_gradient)
        for m in self.ensemble:
            m.tokenize(self.target)

    def _evaluate(self, delta: np.ndarray) -> tuple[bool, dict[str, LossBreakdown], dict[str, str]]:
        x_adv = self.carrier + delta
        losses, texts = {}, {}
        lp = lf = None
        for m in sorted(self.ensemble.members, key=lambda m: m.id):
            text, la = m.evaluate(x_adv, self.target)
            texts[m.id] = normalize_text(text)
            if lp is None:
                b = self.loss.breakdown(delta, m, self.target, adversarial=la)
                lp, lf = b.imperceptibility, b.acoustic_feature
            losses[m.id] = LossBreakdown.combine(la, lp, lf, self.config.weights)
        valid = all(matches_target(t, self.target) for t in texts.values())
        return valid, losses, texts

    def steps(self, init: Perturbation) -> Iterator[StepRecord]:
        cfg = self.config
        delta = np.asarray(init.delta, dtype=np.float64)
        delta_stage = init.stage
        for step in range(1, cfg.max_steps + 1):
            self.ensemble.shuffle()
            delta0 = delta
            produced = [delta0]
            inner = []
            for j, model in enumerate(self.ensemble.members, start=1):
                pert = inner_step(j, model, self.carrier, produced[:j], self.target, cfg,
                                  self.loss, self.noise_rng)
                inner.append(pert)
                produced.append(pert.delta)
            out = outer_update([p.delta for p in inner], delta0, cfg.eta)
            delta = out.delta
            if delta_stage == Stage.INIT:
                # the initial perturbation is not yet inside the bound
                delta = clip_to_carrier(delta, self.carrier, cfg.epsilon)
                out = Perturbation(delta, Stage.OUTER)
            delta_stage = Stage.OUTER
            valid, losses, texts = self._evaluate(delta)
            yield StepRecord(step, self.ensemble.ids, inner, out, valid, losses, texts)


def run_attack(carrier: AudioClip, target: str, command_audio: AudioClip, ensemble,
               config: AttackConfig | None = None, init: Perturbation | None = None) -> AttackResult:
    """Initialize with AdaSearch, optimize, and collect the valid example set."""
    cfg = config or AttackConfig()
    models = list(getattr(ensemble, "members", ensemble))
    if init is None:
        init = ada_search(carrier, target, command_audio, models, cfg.init)
    position = init.meta.get("position", 0)
    reference = pad_command(command_audio.samples, len(carrier), position)
    opt = SequentialEnsembleOptimizer(carrier, target, models, cfg, reference)
    x = carrier.samples
    valid_set: list[ValidExample] = []
    trace: list[dict] = []
    final = init
    dropped = 0
    for rec in opt.steps(init):
        trace.append(rec.trace_row())
        final = rec.delta
        if rec.valid:
            d = rec.delta.delta
            survives = validate_on_all(models, pcm16_roundtrip(x + d), target)
            if not survives:
                logger.warning("step %d: valid example fails after PCM16 quantization", rec.step)
                if cfg.require_pcm16_valid:
                    dropped += 1
                    continue
            valid_set.append(ValidExample(x, d, rec.step, snr_db(x, d), survives))
            if cfg.stop_after_first_valid:
                break
        if rec.step % 50 == 0:
            logger.info("step %d/%d: |X'|=%d losses=%s", rec.step, cfg.max_steps, len(valid_set),
                        {k: round(v["total"], 3) for k, v in trace[-1]["losses"].items()})
    return AttackResult(normalize_text(target), carrier, init, valid_set, trace, final, cfg,
                        [m.id for m in models], dropped)
