from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_word(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"Stream keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *keys: Key) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, *keys)``.

    The same seed and keys always give the same stream, independent of how
    many other streams were created before it.
    """

    spawn_key = tuple(_key_word(k) for k in keys)
    sequence = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(sequence))


@dataclass(frozen=True, slots=True)
class StormStreams:
    """Random streams for one replicate path: arrivals and per-edge marks."""

    seed: int
    replicate: int = 0

    def arrivals(self) -> np.random.Generator:
        return stream(self.seed, "arrivals", self.replicate)

    def marks(self, edge: int | None = None) -> np.random.Generator:
        if edge is None:
            return stream(self.seed, "marks", self.replicate)
        return stream(self.seed, "marks", self.replicate, edge)

    def spawn(self, replicate: int) -> "StormStreams":
        return StormStreams(seed=self.seed, replicate=replicate)


__all__ = ["StormStreams", "stream"]
