"""The differentiable-recognizer interface every surrogate implements."""

from __future__ import annotations

import abc
import enum

import numpy as np

from ..audio import AudioClip, ArrayLike, as_array
from ..errors import AudioTooShort, UnsupportedSampleRate, UntokenizableTarget

CHAR_VOCAB = tuple("abcdefghijklmnopqrstuvwxyz ")


class Category(str, enum.Enum):
    CNN_BASED = "CNN_BASED"
    TRANSFORMER_BASED = "TRANSFORMER_BASED"
    MOCK = "MOCK"


class DecoderKind(str, enum.Enum):
    CTC = "CTC"
    TRANSDUCER = "TRANSDUCER"
    THRESHOLD_MOCK = "THRESHOLD_MOCK"


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; nothing else is touched."""
    return " ".join(text.lower().split())


class SurrogateModel(abc.ABC):
    """A white-box recognizer usable as a surrogate.

    Subclasses work on raw float64 sample arrays at ``sample_rate``. The
    module-level helpers below add the clip-level checks.
    """

    id: str
    category: Category
    decoder_kind: DecoderKind
    vocabulary: tuple = CHAR_VOCAB
    sample_rate: int = 16000
    min_length: int = 1

    def tokenize(self, target: str) -> str:
        text = normalize_text(target)
        bad = sorted({c for c in text if c not in self.vocabulary})
        if bad:
            raise UntokenizableTarget(f"{self.id}: symbols {bad!r} not in vocabulary")
        return text

    @abc.abstractmethod
    def transcribe_array(self, x: np.ndarray) -> str:
        ...

    @abc.abstractmethod
    def loss_and_grad(self, x: np.ndarray, target: str) -> tuple[float, np.ndarray]:
        """Adversarial loss for ``target`` and its gradient w.r.t. the samples."""

    def loss_value(self, x: np.ndarray, target: str) -> float:
        return self.loss_and_grad(x, target)[0]

    def evaluate(self, x: np.ndarray, target: str) -> tuple[str, float]:
        """Transcript and adversarial loss; models may share one forward pass."""
        return self.transcribe_array(x), self.loss_value(x, target)

    def __repr__(self):
        return f"{type(self).__name__}(id={self.id!r})"


def _checked(model: SurrogateModel, clip: ArrayLike) -> np.ndarray:
    if isinstance(clip, AudioClip) and clip.sample_rate != model.sample_rate:
        raise UnsupportedSampleRate(
            f"{model.id} expects {model.sample_rate} Hz, got {clip.sample_rate} Hz")
    x = as_array(clip)
    if x.size < model.min_length:
        raise AudioTooShort(f"{model.id} needs at least {model.min_length} samples, got {x.size}")
    return x


def transcribe(model: SurrogateModel, clip: ArrayLike) -> str:
    return normalize_text(model.transcribe_array(_checked(model, clip)))


def adversarial_loss(model: SurrogateModel, clip: ArrayLike, target: str) -> float:
    return float(model.loss_value(_checked(model, clip), model.tokenize(target)))


def loss_gradient(model: SurrogateModel, clip: ArrayLike, target: str) -> np.ndarray:
    return model.loss_and_grad(_checked(model, clip), model.tokenize(target))[1]


def matches_target(transcript: str, target: str) -> bool:
    return normalize_text(transcript) == normalize_text(target)
