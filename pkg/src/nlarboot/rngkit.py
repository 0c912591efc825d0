"""Deterministic random-stream derivation.

Every public operation accepts ``seed`` as ``None`` (fresh entropy), an
``int``, or a ``numpy.random.SeedSequence``.  Sub-streams are derived by
extending the spawn key, so a stream keyed by e.g. ``(replication, role)``
is identical no matter which worker draws it, in which order, or which
other streams exist.
"""
from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.SeedSequence | None"


def as_seed_sequence(seed=None) -> np.random.SeedSequence:
    """Normalize ``seed`` into a SeedSequence (fresh entropy when None)."""
    if seed is None:
        return np.random.SeedSequence()
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)):
        return np.random.SeedSequence(int(seed))
    raise TypeError(f"seed must be None, int or SeedSequence, got {type(seed)!r}")


def derive(parent: np.random.SeedSequence, *key: int) -> np.random.SeedSequence:
    """Child SeedSequence obtained by extending the parent's spawn key."""
    return np.random.SeedSequence(
        entropy=parent.entropy, spawn_key=tuple(parent.spawn_key) + tuple(int(k) for k in key)
    )


def generator(seed=None, *key: int) -> np.random.Generator:
    """Generator for ``seed``, optionally derived through ``key``."""
    ss = as_seed_sequence(seed)
    if key:
        ss = derive(ss, *key)
    return np.random.default_rng(ss)
