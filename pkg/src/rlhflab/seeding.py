"""Keyed random streams derived from one master seed.

``stream(seed, "gen", batch, prompt_id)`` always yields the same generator
for the same key, independent of how many other streams were drawn before,
so batched or reordered work stays reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _words(key) -> list[int]:
    out = []
    for k in key:
        if isinstance(k, (int, np.integer)):
            k = int(k)
            out.extend([k & 0xFFFFFFFF, (k >> 32) & 0xFFFFFFFF])
        else:
            out.append(zlib.crc32(str(k).encode()))
    return out


def stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(_words((seed, *key))))
