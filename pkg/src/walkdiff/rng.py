"""Counter-based random number streams.

Built on numpy's Philox generator: the pair (seed, stream_id) is the 128-bit
Philox key, so distinct stream ids give independent-quality streams and the
triple (seed, stream_id, counter) fully determines every future draw.  Worker
threads each own a stream; merging results in stream-id order keeps every
experiment reproducible independently of thread count.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """One reproducible stream of randomness."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._bitgen = np.random.Philox(key=(self.seed & _U64, self.stream_id & _U64))
        self.generator = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> tuple[int, ...]:
        """Philox 256-bit block counter; advances deterministically with draws."""
        state = self._bitgen.state["state"]["counter"]
        return tuple(int(c) for c in state)

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"


_U64 = (1 << 64) - 1


def substreams(seed: int, count: int, base: int = 0) -> list[RngStream]:
    """Streams base..base+count-1 for chunked parallel work."""
    return [RngStream(seed, base + i) for i in range(count)]
