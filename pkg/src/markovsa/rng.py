"""Per-replication random streams.

Replication ``i`` of a run with master seed ``s`` draws from
``PCG64(splitmix64(s, i))``. Streams are consumed in fixed-size row blocks,
and since PCG64 doubles are produced sequentially, block size never changes
the values a replication sees.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(seed, index):
    """Output of the splitmix64 generator started at ``seed`` after ``index + 1`` increments."""
    z = (seed + (index + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_seeds(master, count, start=0):
    return [splitmix64(master & MASK64, i) for i in range(start, start + count)]


def generator(seed):
    return np.random.Generator(np.random.PCG64(seed))


def slow_stream_seed(seed):
    # second, decorrelated stream owned by the same replication (slow timescale)
    return splitmix64(seed, 0x5157)


class UniformBlocks:
    """Hands out rows of uniforms for a batch of independent streams.

    Row ``n`` for replication ``r`` holds the ``width`` uniforms that
    replication consumes at its ``n``-th step.
    """

    def __init__(self, gens, width, block=4096):
        self.gens = list(gens)
        self.width = width
        self.block = block
        self._buf = None
        self._pos = block

    def next_row(self):
        if self.width == 0:
            return np.empty((len(self.gens), 0))
        if self._pos >= self.block:
            self._buf = np.stack([g.random((self.block, self.width)) for g in self.gens], axis=1)
            self._pos = 0
        row = self._buf[self._pos]
        self._pos += 1
        return row
