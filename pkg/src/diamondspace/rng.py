"""Seeded counter-based random streams."""
import numpy as np


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by a 64-bit seed and an optional stream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))
