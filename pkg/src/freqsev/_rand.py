"""Seed derivation for named random substreams.

All randomness in a run flows from a single integer seed. Independent
tasks (fold construction, grid sampling, weight init, dropout, bagging)
each get their own substream so that adding or reordering tasks does not
perturb the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, *names: object) -> int:
    """Return a deterministic child seed for the given substream names."""
    tag = "/".join(str(n) for n in names)
    return int(np.random.SeedSequence([seed, zlib.crc32(tag.encode())]).generate_state(1)[0])


def substream(seed: int, *names: object) -> np.random.Generator:
    """A Generator seeded from `seed` and the substream names."""
    return np.random.default_rng(derive_seed(seed, *names))
