"""Seeded, splittable random streams.

A stream is identified by ``(master_seed, stream_id)`` plus an optional path of
child indices. Every call to :meth:`RngStream.generator` builds a fresh
generator from the same seed material, so a stream is a *name* for a sequence
rather than a stateful object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"master_seed must fit in 64 bits, got {self.master_seed}")
        if self.stream_id < 0 or any(k < 0 for k in self.path):
            raise ValueError("stream ids must be non-negative")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            int(self.master_seed), spawn_key=(int(self.stream_id), *map(int, self.path))
        )

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))

    def child(self, k: int) -> RngStream:
        """Independent sub-stream ``k`` of this stream."""
        return RngStream(self.master_seed, self.stream_id, (*self.path, int(k)))


def as_generator(stream) -> np.random.Generator:
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise TypeError(f"expected RngStream or numpy Generator, got {type(stream).__name__}")
