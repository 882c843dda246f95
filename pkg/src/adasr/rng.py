"""Seeded random state with named substreams.

One substream per purpose (parameter init, pairing/location sampling, data
augmentation) so that enabling or disabling one consumer never shifts the
draws seen by another.  PCG64 keeps the sequences stable across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np

PURPOSES = ("init", "sampling", "augment")


class RngState:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, purpose: str) -> np.random.Generator:
        """Return the generator for one purpose, creating it on first use."""
        if purpose not in PURPOSES:
            raise ValueError(f"unknown rng purpose {purpose!r}")
        if purpose not in self._streams:
            key = zlib.crc32(purpose.encode("ascii"))
            seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
            self._streams[purpose] = np.random.Generator(np.random.PCG64(seq))
        return self._streams[purpose]

    def state(self) -> dict:
        """Snapshot seed plus the internal state of every touched substream."""
        return {
            "seed": self.seed,
            "streams": {
                name: gen.bit_generator.state for name, gen in self._streams.items()
            },
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngState":
        rng = cls(state["seed"])
        for name, bg_state in state["streams"].items():
            gen = rng.stream(name)
            gen.bit_generator.state = bg_state
        return rng
