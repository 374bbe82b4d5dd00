"""Counter-based random streams.

Every stream is a Philox-4x64 generator keyed by ``(seed, stream_id)``. Child
streams get their id by mixing the parent id with an integer index, so a unit
of work (a Monte Carlo chunk, a training batch, a sweep cell) always sees the
same draws no matter how work is scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at draw index zero of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *path: int) -> "RngStream":
        """Derive a substream; ``child(a, b)`` equals ``child(a).child(b)``."""
        sid = self.stream_id
        for idx in path:
            sid = splitmix64(sid ^ splitmix64(int(idx) & _MASK64))
        return RngStream(self.seed, sid)

    def named(self, name: str) -> "RngStream":
        """Substream keyed by a short ASCII label (e.g. ``"awgn"``)."""
        return self.child(int.from_bytes(name.encode("ascii")[:8].ljust(8, b"\0"), "little"))
