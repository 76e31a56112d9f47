"""Deterministic named random substreams derived from one root seed.

Every component draws from its own substream so any stage can be reproduced
in isolation: the corpus sampler does not disturb training randomness, and a
search run does not depend on how many batches were trained before it.
"""

from __future__ import annotations

import numpy as np

_STREAM_KEYS = {
    "data": 0,
    "init": 1,
    "train": 2,
    "bo": 3,
    "eval": 4,
    "split": 5,
}


def substream(root_seed: int, name: str) -> np.random.Generator:
    try:
        key = _STREAM_KEYS[name]
    except KeyError:
        raise ValueError(f"unknown random substream {name!r}") from None
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(key,))
    return np.random.default_rng(seq)
