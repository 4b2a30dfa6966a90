"""Named random sub-streams derived from one root seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(root_seed: int, *names) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root_seed) & 0xFFFFFFFF, *(_key(n) for n in names)])


def rng_for(root_seed: int, *names) -> np.random.Generator:
    """Independent generator for the sub-stream identified by ``names``."""
    return np.random.default_rng(seed_sequence(root_seed, *names))


def int_seed(root_seed: int, *names) -> int:
    return int(seed_sequence(root_seed, *names).generate_state(1)[0])
