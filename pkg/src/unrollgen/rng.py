"""Deterministic child random streams.

Every stochastic operation draws from its own stream, derived from
``(master_seed, purpose, index...)``. The bit generator is Philox 4x64, a
counter-based generator, seeded through ``numpy.random.SeedSequence`` with the
purpose tag folded into the spawn key. Distinct tags or indices give
statistically independent streams, so sweep cells can run in any order or in
parallel and still reproduce bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_key(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def child_stream(master_seed: int, purpose: str, *index: int) -> np.random.Generator:
    """Generator for ``purpose`` (and optional integer indices) under ``master_seed``."""
    spawn_key = (_tag_key(purpose),) + tuple(int(i) & _MASK64 for i in index)
    ss = np.random.SeedSequence(entropy=int(master_seed) & _MASK64, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
