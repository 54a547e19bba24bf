"""Counter-based random streams.

Every random draw in pamlab comes from a Philox generator whose key is
``(seed, tag)`` and whose counter is offset by a block index.  A block is
therefore a pure function of ``(seed, tag, index)``: blocks can be produced
in any order, by any worker, and always give the same numbers.
"""

import numpy as np

_MASK64 = (1 << 64) - 1

# stream tags, one per consumer
SHEET = 1
FIELD = 2
PATHS = 3
FIELD_AT_PATHS = 4
START = 5
MULTISTART = 6
BOOTSTRAP = 7
MISC = 8


def stream(seed, tag, *index):
    """Return a generator for block ``index`` of stream ``tag`` under ``seed``.

    Up to two block indices are supported; each block owns 2**128 counter
    values, so blocks never overlap.
    """
    if len(index) > 2:
        raise ValueError("at most two block indices")
    idx = [int(i) & _MASK64 for i in index] + [0] * (2 - len(index))
    key = np.array([int(seed) & _MASK64, int(tag) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, idx[0], idx[1]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def normals(seed, tag, index, shape):
    """Standard normals for one block."""
    return stream(seed, tag, index).standard_normal(shape)
