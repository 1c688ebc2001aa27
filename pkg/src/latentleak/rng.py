"""Seeded, splittable random streams.

Every stochastic call in the package takes an explicit :class:`SeededRng`.
Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
``(seed, stream)`` pins the sequence and distinct stream ids are independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeededRng:
    seed: int
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if isinstance(self.stream, int):
            object.__setattr__(self, "stream", (self.stream,))
        for s in self.stream:
            if not 0 <= s <= _MASK64:
                raise ValueError(f"stream id must be a 64-bit unsigned integer, got {s}")

    def child(self, *ids: int) -> "SeededRng":
        """Return the sub-stream ``stream + ids``."""
        return SeededRng(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """A fresh numpy Generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))


# stream tags, kept distinct so call sites never share a sub-stream
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_REPARAM = 3
STREAM_CLIENT = 4
STREAM_MASK = 5
STREAM_DP = 6
STREAM_DATA = 7
STREAM_TAIL = 8
