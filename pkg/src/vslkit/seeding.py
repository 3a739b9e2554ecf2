"""Deterministic derivation of independent random streams.

All stochastic operations in this package take explicit 64-bit root seeds.
Child streams are derived with a splittable scheme so that independent
units of work (trajectories, repetitions, values, agents) draw from
non-overlapping streams regardless of execution order:

    child entropy = [root, crc32(tag_1), ..., crc32(tag_k)]

fed to ``numpy.random.SeedSequence``. String tags are hashed with CRC-32,
integer tags are used as-is. The same (root, path) always yields the same
stream on every platform.
"""

from __future__ import annotations

import zlib

import numpy as np


def _entropy(root: int, path) -> list[int]:
    ent = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            ent.append(zlib.crc32(part.encode("utf-8")))
        else:
            ent.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return ent


def derive_seed(root: int, *path) -> int:
    """Derive a 64-bit child seed from a root seed and a tag path."""
    ss = np.random.SeedSequence(_entropy(root, path))
    return int(ss.generate_state(1, np.uint64)[0])


def generator(root: int, *path) -> np.random.Generator:
    """A ``numpy`` Generator seeded from ``derive_seed(root, *path)``."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(root, path)))


def spawn_generators(root: int, tag: str, count: int) -> list[np.random.Generator]:
    """Independent per-index generators, e.g. one per sampled trajectory."""
    return [generator(root, tag, i) for i in range(count)]
