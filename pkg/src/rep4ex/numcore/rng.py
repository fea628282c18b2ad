"""Seedable, splittable random streams on top of the Philox counter-based generator.

Every stochastic quantity in the library is drawn from an ``RngStream``
identified by a ``(seed, stream_id)`` pair.  Equal pairs produce bit-identical
sequences on every platform; distinct ``stream_id`` values give statistically
independent streams, so experiment repetitions can be dispatched to workers
without sharing generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        # blake2b rather than hash(): stable across processes and platforms.
        return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
    return key & _MASK64


class RngStream:
    """One deterministic random stream, lazily backed by ``numpy.random.Philox``.

    ``derive`` builds child streams by mixing extra keys (integers or string
    tags) into the stream id; children are independent of each other and of
    how much the parent has already consumed.
    """

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK64
        self.stream_id = stream_id & _MASK64
        self._gen: np.random.Generator | None = None

    def derive(self, *keys: int | str) -> "RngStream":
        sid = self.stream_id
        for key in keys:
            sid = _splitmix64(sid ^ _splitmix64(_key_to_int(key)))
        return RngStream(self.seed, sid)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            self._gen = np.random.Generator(np.random.Philox(key=(self.seed, self.stream_id)))
        return self._gen

    # Thin sampling helpers; all consume the stream's single generator in order.

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size=size)

    def standard_normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
