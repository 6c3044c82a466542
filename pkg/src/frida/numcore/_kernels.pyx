# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled counter-based random kernels.

Word ``i`` of a stream is ``mix64(key + (counter + i + 1) * GAMMA)``, the
SplitMix64 output function evaluated at an explicit position, so any slice of
the stream can be produced without generating what precedes it.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, log, sin, sqrt
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double word_to_unit(uint64_t w) nogil:
    return <double>(w >> 11) * INV_2_53


def random_words(uint64_t key, uint64_t counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = mix64(key + (counter + <uint64_t>i + 1) * GAMMA)
    return out


def uniform_fill(uint64_t key, uint64_t counter, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = word_to_unit(mix64(key + (counter + <uint64_t>i + 1) * GAMMA))
    return out


def normal_fill(uint64_t key, uint64_t counter, Py_ssize_t n):
    """Box-Muller normals; consumes ``2 * ceil(n / 2)`` words."""
    cdef Py_ssize_t pairs = (n + 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(2 * pairs, dtype=np.float64)
    cdef Py_ssize_t j
    cdef uint64_t base
    cdef double u1, u2, r, theta
    with nogil:
        for j in range(pairs):
            base = counter + 2 * <uint64_t>j
            u1 = 1.0 - word_to_unit(mix64(key + (base + 1) * GAMMA))
            u2 = word_to_unit(mix64(key + (base + 2) * GAMMA))
            r = sqrt(-2.0 * log(u1))
            theta = TWO_PI * u2
            out[2 * j] = r * cos(theta)
            out[2 * j + 1] = r * sin(theta)
    return out[:n]
