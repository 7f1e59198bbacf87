"""Counter-based standard-normal streams.

Every sample index maps to a fixed block of ``BLOCK_SIZE`` draws, and each
block is generated by a Philox generator keyed on ``(seed, block)``.  A draw
therefore depends only on ``(seed, index, dim)``: the same index yields the
same vector whether it was requested alone, inside a large batch, or from a
different worker.
"""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 1024
_MASK64 = (1 << 64) - 1


def _block_key(seed: int, block: int) -> int:
    if seed < 0 or seed > _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return (seed << 64) | (block & _MASK64)


def normal_block(seed: int, block: int, dim: int) -> np.ndarray:
    """Return the ``(BLOCK_SIZE, dim)`` array of draws owned by ``block``."""
    gen = np.random.Generator(np.random.Philox(key=_block_key(seed, block)))
    return gen.standard_normal((BLOCK_SIZE, dim))


def normals(seed: int, start: int, n: int, dim: int) -> np.ndarray:
    """Draws for sample indices ``start, ..., start + n - 1`` as an ``(n, dim)`` array."""
    if n < 0 or start < 0:
        raise ValueError("start and n must be non-negative")
    out = np.empty((n, dim))
    idx = start
    stop = start + n
    while idx < stop:
        block, offset = divmod(idx, BLOCK_SIZE)
        take = min(BLOCK_SIZE - offset, stop - idx)
        out[idx - start : idx - start + take] = normal_block(seed, block, dim)[offset : offset + take]
        idx += take
    return out


class NormalStream:
    """Sequential reader over a counter-based stream with a one-block cache.

    Reading indices in increasing order costs one generator call per block,
    which keeps per-step draws in an SGD loop cheap.
    """

    def __init__(self, seed: int, dim: int, start: int = 0):
        self.seed = int(seed)
        self.dim = int(dim)
        self.position = int(start)
        self._cached_block = -1
        self._cache = None

    def _block(self, block: int) -> np.ndarray:
        if block != self._cached_block:
            self._cache = normal_block(self.seed, block, self.dim)
            self._cached_block = block
        return self._cache

    def take(self, n: int) -> np.ndarray:
        out = np.empty((n, self.dim))
        filled = 0
        while filled < n:
            block, offset = divmod(self.position, BLOCK_SIZE)
            k = min(BLOCK_SIZE - offset, n - filled)
            out[filled : filled + k] = self._block(block)[offset : offset + k]
            filled += k
            self.position += k
        return out


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministically derive an independent 64-bit seed from ``seed`` and integer labels."""
    ss = np.random.SeedSequence([int(seed), *[int(x) for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
