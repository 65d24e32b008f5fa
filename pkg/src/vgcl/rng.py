"""Seeded random streams.

All randomness in a run flows from one 64-bit seed through named substreams
(augmentation, weights, splits, ...) so that each component is reproducible
on its own. Stream names are hashed with crc32, which is stable across
processes (unlike Python's salted ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for (seed, name); same inputs, same stream."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


def generator_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
