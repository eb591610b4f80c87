"""Counter-based random streams on top of numpy's Philox generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_WORD = 64
_COUNTER_BITS = 256


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(seed, counter)``.

    The same pair always yields the same draw sequence. Substreams are carved
    out by offsetting the 256-bit Philox counter in one of its upper words, so
    ``s.substream(i, level)`` for distinct ``(i, level)`` never overlap as long
    as each substream draws fewer than 2**64 blocks. Index 0 is a zero offset
    (the parent itself): a stream that hands out substreams should not also
    draw directly.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        key = self.seed % (1 << 64)
        return np.random.Generator(np.random.Philox(key=key, counter=self.counter % (1 << _COUNTER_BITS)))

    def substream(self, index: int, level: int = 1) -> "RngStream":
        if not 1 <= level <= 3:
            raise ValueError("level must be 1, 2 or 3")
        if index < 0:
            raise ValueError("substream index must be non-negative")
        return RngStream(self.seed, self.counter + (index << (_WORD * level)))

    def uniform_open(self, size) -> np.ndarray:
        """Uniform draws in the open interval (0, 1); exact zeros are redrawn."""
        gen = self.generator()
        u = gen.random(size)
        bad = u <= 0.0
        while bad.any():
            u[bad] = gen.random(int(bad.sum()))
            bad = u <= 0.0
        return u
