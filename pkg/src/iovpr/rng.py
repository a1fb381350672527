"""Seed derivation.

All randomness uses numpy's PCG64. A stage gets its own stream seeded from
``(root_seed, blake2b-64(stage_name))`` through ``SeedSequence``, so any stage
can be re-run alone and still see the same numbers.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stage_key(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


def stage_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stage_key(name)])))
