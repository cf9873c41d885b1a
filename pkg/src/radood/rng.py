"""Reproducible random streams.

All randomness in the package flows through Philox, a 64-bit counter-based
generator. Independent streams are derived two ways:

* ``derive(seed, *path)`` — a named child stream, addressed by a path of
  strings/ints hashed into a ``SeedSequence`` spawn key.
* ``signal_stream(family_key, i)`` — one stream per signal index inside a
  batch, keyed as (family, index) on the 128-bit Philox key. Batches are
  therefore prefix-stable: growing ``n`` never changes earlier signals.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive", "family_key", "signal_stream", "spawn_key_part"]

_U64 = np.uint64


def spawn_key_part(part) -> int:
    """Map a path component (int or str) to a stable uint32 for spawn keys."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("path components must be non-negative")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def _seed_sequence(seed, path) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        base_entropy, base_key = seed.entropy, tuple(seed.spawn_key)
    else:
        base_entropy, base_key = int(seed), ()
    key = base_key + tuple(spawn_key_part(p) for p in path)
    return np.random.SeedSequence(entropy=base_entropy, spawn_key=key)


def derive(seed, *path) -> np.random.Generator:
    """Named Philox stream for ``seed`` at ``path`` (ints and strings)."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, path)))


def family_key(seed, *path) -> int:
    """64-bit family key for per-signal streams (see ``signal_stream``)."""
    return int(_seed_sequence(seed, path).generate_state(1, dtype=_U64)[0])


def signal_stream(family: int, index: int) -> np.random.Generator:
    """Stream for signal ``index`` within the family ``family``."""
    key = np.array([family, index], dtype=_U64)
    return np.random.Generator(np.random.Philox(key=key))
