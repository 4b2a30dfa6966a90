"""Ordered surrogate ensembles."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..audio import ArrayLike
from .base import SurrogateModel, matches_target, transcribe


class SurrogateEnsemble:
    """An ordered list of surrogates with its own seeded RNG for shuffling.

    The RNG belongs to whoever drives the outer optimization loop; do not
    shuffle from several threads.
    """

    def __init__(self, members: Sequence[SurrogateModel], rng_seed: int = 0):
        members = list(members)
        if not members:
            raise ValueError("an ensemble needs at least one surrogate")
        ids = [m.id for m in members]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate surrogate ids: {ids}")
        self.members = members
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, idx):
        return self.members[idx]

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.members]

    def shuffle(self) -> "SurrogateEnsemble":
        """Fisher-Yates in place; returns self."""
        m = self.members
        for i in range(len(m) - 1, 0, -1):
            j = int(self.rng.integers(0, i + 1))
            m[i], m[j] = m[j], m[i]
        return self


def transcripts(models: Iterable[SurrogateModel], clip: ArrayLike) -> dict[str, str]:
    return {m.id: transcribe(m, clip) for m in models}


def validate_on_all(ensemble: Iterable[SurrogateModel], clip: ArrayLike, target: str) -> bool:
    """True iff every member transcribes ``clip`` exactly as ``target`` (case-insensitive)."""
    return all(matches_target(transcribe(m, clip), target) for m in ensemble)
