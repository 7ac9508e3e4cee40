"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(master seed, purpose tag,
index...)``.  Streams with different keys are statistically independent, and a
given key always reproduces the same stream regardless of which process or in
which order it is requested.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

FIELD = "field"
TAU = "tau"
BOOTSTRAP = "bootstrap"
QUADRATURE = "quadrature"


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class SeedRecord:
    """Lineage of one stream: master seed, purpose and integer indices."""

    master: int
    purpose: str
    index: tuple = ()

    def child(self, *index: int) -> "SeedRecord":
        return SeedRecord(self.master, self.purpose, self.index + tuple(int(i) for i in index))

    def generator(self) -> np.random.Generator:
        return stream(self.master, self.purpose, *self.index)

    def as_dict(self) -> dict:
        return {"master": self.master, "purpose": self.purpose, "index": list(self.index)}


def stream(master_seed: int, purpose: str, *index: int) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("master seed must be non-negative")
    key = np.random.SeedSequence(
        int(master_seed), spawn_key=(purpose_tag(purpose),) + tuple(int(i) for i in index)
    )
    return np.random.Generator(np.random.Philox(key))
