"""Deterministic threshold recognizers for tests and dry runs."""

from __future__ import annotations

import numpy as np

from .base import Category, DecoderKind, SurrogateModel


class ThresholdMock(SurrogateModel):
    """Emits ``text`` iff the mean absolute amplitude over ``[start, end)`` reaches ``threshold``.

    The adversarial loss is the squared hinge ``max(0, threshold - mean|x_w|)**2``,
    which is zero exactly when the mock accepts. It ignores which target it is
    asked about: a mock only ever knows one sentence.
    """

    category = Category.MOCK
    decoder_kind = DecoderKind.THRESHOLD_MOCK

    def __init__(self, id: str, text: str, threshold: float, start: int = 0, end: int | None = None,
                 sample_rate: int = 16000):
        if end is not None and end <= start:
            raise ValueError(f"empty acceptance window [{start}, {end})")
        self.id = id
        self.text = text
        self.threshold = float(threshold)
        self.start = int(start)
        self.end = end if end is None else int(end)
        self.sample_rate = sample_rate
        self.min_length = max(1, self.end or self.start + 1)

    def _window(self, x: np.ndarray) -> slice:
        return slice(self.start, self.end if self.end is not None else x.size)

    def window_mean(self, x: np.ndarray) -> float:
        return float(np.mean(np.abs(x[self._window(x)])))

    def transcribe_array(self, x):
        return self.text if self.window_mean(x) >= self.threshold else ""

    def loss_and_grad(self, x, target):
        w = self._window(x)
        seg = x[w]
        gap = max(0.0, self.threshold - float(np.mean(np.abs(seg))))
        grad = np.zeros_like(x, dtype=np.float64)
        grad[w] = -2.0 * gap * np.sign(seg) / seg.size
        return gap * gap, grad

    def loss_value(self, x, target):
        gap = max(0.0, self.threshold - self.window_mean(x))
        return gap * gap


def always_accept(id: str, text: str) -> ThresholdMock:
    return ThresholdMock(id, text, threshold=0.0)


def always_reject(id: str) -> ThresholdMock:
    return ThresholdMock(id, "", threshold=0.0)
