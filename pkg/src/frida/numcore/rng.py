"""Counter-based deterministic random streams."""
from __future__ import annotations

import math

import numpy as np

from frida.numcore import kernels

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class RngStream:
    """A reproducible stream addressed by ``(seed, counter)``.

    Every draw reads words at positions ``counter, counter + 1, ...`` and then
    advances ``counter`` past them, so two streams with equal state produce
    equal draws regardless of what happened elsewhere in the program.
    Substreams from :meth:`spawn` are keyed off the seed alone and do not
    touch the parent's counter.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = int(counter) & _MASK

    @property
    def key(self) -> int:
        return mix64(self.seed ^ 0x5851F42D4C957F2D)

    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def copy(self) -> RngStream:
        return RngStream(self.seed, self.counter)

    def spawn(self, *tags: int) -> RngStream:
        """Independent child stream identified by integer ``tags``."""
        s = self.key
        for t in tags:
            s = mix64(s ^ mix64((int(t) + 1) * _GAMMA))
        return RngStream(s, 0)

    def _advance(self, words: int) -> int:
        start = self.counter
        self.counter = (self.counter + words) & _MASK
        return start

    def words(self, n: int) -> np.ndarray:
        return kernels.random_words(self.key, self._advance(n), n)

    def uniform(self, size) -> np.ndarray:
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = math.prod(shape)
        return kernels.uniform_fill(self.key, self._advance(n), n).reshape(shape)

    def normal(self, rows: int, cols: int) -> np.ndarray:
        n = rows * cols
        out = kernels.normal_fill(self.key, self._advance(2 * ((n + 1) // 2)), n)
        return out.reshape(rows, cols)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Uniform integers in ``[0, high)``."""
        if high <= 0:
            raise ValueError("high must be positive")
        idx = np.floor(self.uniform(size) * high).astype(np.int64)
        return np.minimum(idx, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def __eq__(self, other):
        return isinstance(other, RngStream) and self.state() == other.state()


def gauss_sample(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    """Draw a ``rows x cols`` matrix of i.i.d. standard normals from ``rng``."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"rows and cols must be positive, got {rows}x{cols}")
    return rng.normal(rows, cols)
