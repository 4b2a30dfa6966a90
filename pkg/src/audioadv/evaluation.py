"""Attack metrics (SRoA, SNR aggregation, transfer rate) and input-transform defenses."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .audio import AudioClip, resample
from .errors import AudioTooShort, ConfigError, EmptyReference, EmptyValidSet, InvalidRate
from .surrogates.base import SurrogateModel, matches_target, normalize_text, transcribe
from .surrogates.ensemble import validate_on_all

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Metrics


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def word_error_rate(hyp: str, ref: str) -> float:
    ref_words = normalize_text(ref).split()
    if not ref_words:
        raise EmptyReference("WER needs a non-empty reference")
    return levenshtein(normalize_text(hyp).split(), ref_words) / len(ref_words)


@dataclass(frozen=True)
class Ratio:
    """An unreduced count ratio such as 10/10."""

    numerator: int
    denominator: int

    def __post_init__(self):
        if not 0 <= self.numerator <= self.denominator or self.denominator <= 0:
            raise ValueError(f"invalid ratio {self.numerator}/{self.denominator}")

    def __float__(self):
        return self.numerator / self.denominator

    def __str__(self):
        return f"{self.numerator}/{self.denominator}"


def sroa(outcomes: Iterable[bool]) -> Ratio:
    """Fraction of commands with at least one successful example."""
    outcomes = [bool(o) for o in outcomes]
    if not outcomes:
        raise ValueError("SRoA needs at least one command")
    return Ratio(sum(outcomes), len(outcomes))


def transfer_rate(valid_set: Sequence, model: SurrogateModel, target: str) -> float:
    """Share of the valid set that ``model`` transcribes exactly as ``target``."""
    clips = [getattr(e, "clip", e) for e in valid_set]
    if not clips:
        raise EmptyValidSet("transfer rate is undefined for an empty valid set")
    hits = sum(matches_target(transcribe(model, c), target) for c in clips)
    return hits / len(clips)


def mean_snr(snrs: Iterable[float]) -> float | None:
    vals = [s for s in snrs if s is not None]
    return float(np.mean(vals)) if vals else None


# --------------------------------------------------------------------------
# Defenses


def local_smoothing(clip: AudioClip, h: int, mode: str = "median") -> AudioClip:
    """Replace each sample by the median (or mean) of itself and ``h`` neighbours per side.

    The ends are padded by repeating the first and last sample, so every
    window holds 2h+1 values and monotone signals pass through unchanged.
    """
    if int(h) < 1:
        raise ValueError("smoothing half-width h must be >= 1")
    if mode not in ("median", "mean"):
        raise ValueError(f"unknown smoothing mode {mode!r}")
    h = int(h)
    padded = np.pad(clip.samples, h, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * h + 1)
    reduce = np.median if mode == "median" else np.mean
    return clip.with_samples(reduce(windows, axis=1))


def downsample_defense(clip: AudioClip, f_low: int) -> AudioClip:
    """Resample down to ``f_low`` and back, then pad/truncate to the original length."""
    if not 0 < int(f_low) < clip.sample_rate:
        raise InvalidRate(f"f_low must lie in (0, {clip.sample_rate}), got {f_low}")
    back = resample(resample(clip, int(f_low)), clip.sample_rate).samples
    n = len(clip)
    out = back[:n] if back.size >= n else np.concatenate([back, np.zeros(n - back.size)])
    return clip.with_samples(out)


@dataclass(frozen=True)
class TemporalDependencyResult:
    score: float
    adversarial: bool
    head_transcript: str
    prefix_transcript: str
    full_transcript: str


def temporal_dependency_check(clip: AudioClip, model: SurrogateModel, k: float,
                              threshold: float = 0.5) -> TemporalDependencyResult:
    """Compare the transcript of the first ``k`` of the audio with the first ``k`` of the transcript.

    The score is ``1 - WER(head, prefix)`` floored at 0. When the full
    transcript is empty the score is 1 if the head is empty too, else 0.
    """
    if not 0.0 < k < 1.0:
        raise ValueError("k must lie strictly between 0 and 1")
    n_head = int(math.floor(k * len(clip)))
    if n_head < max(1, model.min_length):
        raise AudioTooShort(f"prefix of {n_head} samples is too short for {model.id}")
    head = transcribe(model, clip.with_samples(clip.samples[:n_head]))
    full = transcribe(model, clip)
    words = full.split()
    prefix = " ".join(words[:math.ceil(k * len(words))])
    if prefix:
        score = max(0.0, 1.0 - word_error_rate(head, prefix))
    else:
        score = 1.0 if not head else 0.0
    return TemporalDependencyResult(score, score < threshold, head, prefix, full)


@dataclass(frozen=True)
class MVPResult:
    agree: bool
    transcripts: dict

    @property
    def adversarial(self) -> bool:
        return not self.agree


def mvp_ears_check(clip: AudioClip, models: Sequence[SurrogateModel]) -> MVPResult:
    """Flag audio whose normalized transcripts differ across ``models``."""
    if len(models) < 2:
        raise ValueError("MVP-EARS needs at least two recognizers")
    texts = {m.id: transcribe(m, clip) for m in models}
    return MVPResult(len(set(texts.values())) == 1, texts)


# --------------------------------------------------------------------------
# Defense sweeps


@dataclass(frozen=True)
class DefenseSetting:
    kind: str  # smoothing | downsample | td | mvp
    params: dict

    @property
    def label(self) -> str:
        names = {"smoothing": "Local Smoothing", "downsample": "Downsampling",
                 "td": "Temporal Dependency", "mvp": "MVP-EARS"}
        return names[self.kind]

    @property
    def setting(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.params.items())


_DEFENSE_PARAMS = {
    "smoothing": {"h": int, "mode": str},
    "downsample": {"f_low": int},
    "td": {"k": float, "threshold": float},
    "mvp": {"m": int},
}


def parse_defenses(spec: str) -> list[DefenseSetting]:
    """Parse ``smoothing:h=2,downsample:f_low=12000,td:k=0.5,mvp:m=2``.

    A bare ``key=value`` token continues the previous defense, so
    ``td:k=0.5,threshold=0.6`` works.
    """
    out: list[DefenseSetting] = []
    for token in filter(None, (t.strip() for t in spec.split(","))):
        if ":" in token:
            kind, _, rest = token.partition(":")
            kind = kind.strip()
            if kind not in _DEFENSE_PARAMS:
                raise ConfigError(f"unknown defense {kind!r}")
            out.append(DefenseSetting(kind, {}))
        elif out:
            rest = token
        else:
            raise ConfigError(f"defense parameter {token!r} without a defense")
        if rest:
            key, eq, value = rest.partition("=")
            kind = out[-1].kind
            if not eq or key not in _DEFENSE_PARAMS[kind]:
                raise ConfigError(f"bad parameter {rest!r} for defense {kind!r}")
            out[-1].params[key] = _DEFENSE_PARAMS[kind][key](value)
    for d in out:
        required = {"smoothing": "h", "downsample": "f_low", "td": "k", "mvp": "m"}[d.kind]
        if required not in d.params:
            raise ConfigError(f"defense {d.kind!r} needs parameter {required!r}")
    return out


def survives_defense(clip: AudioClip, target: str, setting: DefenseSetting,
                     checkers: Sequence[SurrogateModel], pool: Sequence[SurrogateModel]) -> bool:
    """True iff the example still delivers ``target`` once the defense is applied.

    Transform defenses re-validate the transformed audio on ``checkers``;
    detectors require every checker to transcribe the target without the
    detector firing. MVP-EARS draws its ``m`` recognizers from ``pool``.
    """
    p = setting.params
    if setting.kind == "smoothing":
        return validate_on_all(checkers, local_smoothing(clip, p["h"], p.get("mode", "median")), target)
    if setting.kind == "downsample":
        return validate_on_all(checkers, downsample_defense(clip, p["f_low"]), target)
    if setting.kind == "td":
        for m in checkers:
            res = temporal_dependency_check(clip, m, p["k"], p.get("threshold", 0.5))
            if res.adversarial or not matches_target(res.full_transcript, target):
                return False
        return True
    if setting.kind == "mvp":
        if len(pool) < p["m"]:
            raise ConfigError(f"MVP-EARS with m={p['m']} needs {p['m']} recognizers, have {len(pool)}")
        res = mvp_ears_check(clip, list(pool)[:p["m"]])
        return res.agree and all(matches_target(t, target) for t in res.transcripts.values())
    raise ConfigError(f"unknown defense {setting.kind!r}")


@dataclass
class CommandOutcome:
    target: str
    n_examples: int
    snrs: list[float]
    success: dict[str, bool] = field(default_factory=dict)
    best_snr: dict[str, float | None] = field(default_factory=dict)
    transfer_rate: dict[str, float] = field(default_factory=dict)
    defense_survival: dict[str, float] = field(default_factory=dict)
    defense_success: dict[str, bool] = field(default_factory=dict)


@dataclass
class EvalReport:
    commands: list[CommandOutcome]
    models: list[str]
    defenses: list[DefenseSetting]

    def sroa(self, model_id: str) -> Ratio:
        return sroa(c.success.get(model_id, False) for c in self.commands)

    def mean_snr(self, model_id: str) -> float | None:
        return mean_snr(c.best_snr.get(model_id) for c in self.commands if c.success.get(model_id))

    def mean_transfer_rate(self, model_id: str) -> float | None:
        vals = [c.transfer_rate[model_id] for c in self.commands if model_id in c.transfer_rate]
        return float(np.mean(vals)) if vals else None

    def defense_sroa(self, key: str) -> Ratio:
        return sroa(c.defense_success.get(key, False) for c in self.commands)

    def defense_example_rate(self, key: str) -> float | None:
        total = sum(c.n_examples for c in self.commands)
        if not total:
            return None
        return sum(c.defense_survival.get(key, 0.0) * c.n_examples for c in self.commands) / total

    def to_dict(self) -> dict:
        return {
            "models": {
                m: {"sroa": str(self.sroa(m)), "mean_snr_db": self.mean_snr(m),
                    "mean_transfer_rate": self.mean_transfer_rate(m)}
                for m in self.models
            },
            "defenses": [
                {"defense": d.kind, "setting": d.setting, "sroa": str(self.defense_sroa(_key(d))),
                 "example_survival_rate": self.defense_example_rate(_key(d))}
                for d in self.defenses
            ],
            "commands": [
                {"target": c.target, "n_examples": c.n_examples, "success": c.success,
                 "best_snr_db": c.best_snr, "transfer_rate": c.transfer_rate,
                 "defense_survival": c.defense_survival, "defense_success": c.defense_success}
                for c in self.commands
            ],
        }

    def render_table(self) -> str:
        """Plain-text tables: per-model SRoA / SNR / TR, then per-defense survival."""
        models = [("Model", "SRoA", "Mean SNR (dB)", "Mean TR")]
        for m in self.models:
            snr, tr = self.mean_snr(m), self.mean_transfer_rate(m)
            models.append((m, str(self.sroa(m)), "-" if snr is None else f"{snr:.2f}",
                           "-" if tr is None else f"{tr:.2%}"))
        parts = [_table(models)]
        if self.defenses:
            rows = [("Defense", "Setting", "SRoA", "Per-example")]
            for d in self.defenses:
                rate = self.defense_example_rate(_key(d))
                rows.append((d.label, d.setting, str(self.defense_sroa(_key(d))),
                             "-" if rate is None else f"{rate:.2%}"))
            parts.append(_table(rows))
        return "\n\n".join(parts)


def _table(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [line]
    for n, r in enumerate(rows):
        out.append("|".join(f" {c:<{w}} " for c, w in zip(r, widths)))
        if n == 0:
            out.append(line)
    out.append(line)
    return "\n".join(out)


def _key(d: DefenseSetting) -> str:
    return f"{d.kind}:{d.setting}"


def evaluate(examples: dict[str, list[tuple[AudioClip, float]]], models: Sequence[SurrogateModel],
             defenses: Sequence[DefenseSetting] = (), checkers: Sequence[SurrogateModel] | None = None) -> EvalReport:
    """Score per-command example sets against ``models`` and under each defense.

    ``examples`` maps a target command to ``(clip, snr_db)`` pairs. A command
    succeeds on a model if at least one of its examples transcribes exactly
    as the target there.
    """
    checkers = list(checkers if checkers is not None else models)
    outcomes = []
    for target, items in examples.items():
        oc = CommandOutcome(normalize_text(target), len(items), [s for _, s in items])
        for m in models:
            hits = [matches_target(transcribe(m, clip), target) for clip, _ in items]
            oc.success[m.id] = any(hits)
            oc.best_snr[m.id] = max((s for (_, s), h in zip(items, hits) if h), default=None)
            if items:
                oc.transfer_rate[m.id] = sum(hits) / len(items)
        for d in defenses:
            survived = [survives_defense(clip, target, d, checkers, models) for clip, _ in items]
            oc.defense_survival[_key(d)] = sum(survived) / len(items) if items else 0.0
            oc.defense_success[_key(d)] = any(survived)
        outcomes.append(oc)
    return EvalReport(outcomes, [m.id for m in models], list(defenses))
