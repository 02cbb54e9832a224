"""Deterministic seed derivation.

Every random draw in the package comes from a Philox generator whose 128-bit
key is ``(seed, stream)``.  Philox is counter based, so the value of entry
``m`` of a stream depends only on ``(seed, stream, m)`` and never on how work
is split between processes.

Seeds for sub-tasks (Monte Carlo sample ``k``, trial ``t``, width ``n`` ...)
are obtained with :func:`derive_seed`, which folds each path component into a
64-bit state with the SplitMix64 finalizer::

    state = 0x9E3779B97F4A7C15
    for part in (master_seed, *path):
        state = splitmix64(state ^ as_u64(part))

``as_u64`` maps integers modulo 2**64 and strings to the first 8 bytes
(little endian) of their SHA-256 digest.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def _as_u64(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little")
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    return int(part) & MASK64


def derive_seed(master_seed: int, *path) -> int:
    """Mix ``master_seed`` with a path of ints/strings into a 64-bit seed."""
    state = _GOLDEN
    for part in (master_seed, *path):
        state = splitmix64(state ^ _as_u64(part))
    return state


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, stream)``."""
    key = np.array([seed & MASK64, stream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class KeyedStream:
    """One reusable Philox generator that can be re-keyed cheaply.

    ``ks.rng(seed, stream)`` yields exactly the same numbers as
    ``rng_for(seed, stream)``.  The returned generator is shared, so only
    one keyed stream can be live at a time.
    """

    def __init__(self):
        self._bitgen = np.random.Philox(key=np.zeros(2, dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def rng(self, seed: int, stream: int = 0) -> np.random.Generator:
        st = self._state
        st["state"]["key"][:] = (seed & MASK64, stream & MASK64)
        st["state"]["counter"][:] = 0
        st["buffer"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._gen
