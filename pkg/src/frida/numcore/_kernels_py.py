"""Pure-numpy fallback for the compiled random kernels (same streams)."""
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def random_words(key, counter, n):
    pos = np.arange(1, n + 1, dtype=np.uint64) + np.uint64(counter)
    return _mix64(np.uint64(key) + pos * GAMMA)


def _units(key, counter, n):
    return (random_words(key, counter, n) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def uniform_fill(key, counter, n):
    return _units(key, counter, n)


def normal_fill(key, counter, n):
    pairs = (n + 1) // 2
    u = _units(key, counter, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]
