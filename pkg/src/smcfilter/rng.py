"""Seeded, splittable random streams.

Every stochastic routine takes an explicit :class:`numpy.random.Generator`.
Streams are built on the counter-based Philox bit generator and split with
:class:`numpy.random.SeedSequence`, so a run is fully determined by its seed.
"""

from __future__ import annotations

import numpy as np


def make_stream(seed) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def split(seed, n: int) -> list[np.random.Generator]:
    """Split ``seed`` into ``n`` independent streams, indexed deterministically."""
    return [make_stream(child(seed, k)) for k in range(n)]


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child streams from an existing generator."""
    return rng.spawn(n)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def child(seed, *key: int) -> np.random.SeedSequence:
    """Deterministic descendant of ``seed`` addressed by ``key``.

    Unlike ``SeedSequence.spawn`` this keeps no counter, so the same key
    always gives the same stream.
    """
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))
