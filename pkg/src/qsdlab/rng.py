"""Reproducible counter-based random streams.

Every particle (and every pilot run, audit, ...) owns an RngStream
addressed by (root seed, path of child indices).  An identical address
always reproduces the identical byte stream, so parallel and serial runs
agree no matter how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Address of an independent Philox substream.

    ``generator()`` returns a *fresh* generator positioned at the start of
    the substream; calling it twice replays the same draws.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if any(i < 0 for i in self.path):
            raise ValueError("stream indices must be nonnegative")

    def child(self, *indices: int) -> "RngStream":
        """Derive a substream; distinct index paths are independent."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))
