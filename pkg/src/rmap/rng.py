"""Counter-based random streams.

Every sample index owns a fixed block of Philox counters, so draw ``j`` is the
same whether samples are generated one at a time, in bulk, or by several
worker processes in any order.
"""

import numpy as np
from scipy.special import ndtri

# stream identifiers keep independent uses of one seed apart
STREAM_RANDOMIZATION = 0
STREAM_METROPOLIS = 1
STREAM_MCMC = 2
STREAM_DATA = 3


def philox_key(seed, stream=0):
    """128-bit Philox key derived from ``(seed, stream)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return ss.generate_state(2, dtype=np.uint64)


def generator(seed, stream=0):
    """Sequential generator for inherently serial chains (SN, DRAM, MH)."""
    return np.random.Generator(np.random.Philox(key=philox_key(seed, stream)))


def _words_to_normals(words):
    # 53-bit uniforms strictly inside (0, 1), then inverse CDF
    unif = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(unif)


class CounterStream:
    """Standard normal vectors of fixed width addressed by sample index.

    Args:
        seed: integer seed.
        width: number of normals per sample.
        stream: stream identifier, see the ``STREAM_*`` constants.
    """

    def __init__(self, seed, width, stream=STREAM_RANDOMIZATION):
        self.seed = int(seed)
        self.width = int(width)
        self.stream = int(stream)
        self._key = philox_key(seed, stream)
        self._blocks = -(-self.width // 4)

    def normals(self, index):
        """Normals for a single sample index."""
        bg = np.random.Philox(key=self._key, counter=[index * self._blocks, 0, 0, 0])
        return _words_to_normals(bg.random_raw(self.width))

    def normals_block(self, start, stop):
        """Normals for indices ``start..stop-1`` as a ``(stop-start, width)`` array."""
        n = stop - start
        if n <= 0:
            return np.empty((0, self.width))
        bg = np.random.Philox(key=self._key, counter=[start * self._blocks, 0, 0, 0])
        words = bg.random_raw(n * self._blocks * 4).reshape(n, self._blocks * 4)
        return _words_to_normals(words[:, : self.width])

    def uniforms(self, index):
        bg = np.random.Philox(key=self._key, counter=[index * self._blocks, 0, 0, 0])
        words = bg.random_raw(self.width)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
