# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled inner loop for MinHash signatures.

signature[j] = min over shingle hashes x of mix64(x ^ keys[j]), with
mix64 the splitmix64 finalizer. Keep bit-identical to the numpy
fallback in dedup_graph.
"""
from libc.stdint cimport uint64_t

import numpy as np


cdef inline uint64_t _mix64(uint64_t x) noexcept nogil:
    x ^= x >> 30
    x = x * <uint64_t>0xbf58476d1ce4e5b9UL
    x ^= x >> 27
    x = x * <uint64_t>0x94d049bb133111ebUL
    x ^= x >> 31
    return x


def signature_kernel(const uint64_t[::1] hashes, const uint64_t[::1] keys):
    cdef Py_ssize_t n = hashes.shape[0]
    cdef Py_ssize_t p = keys.shape[0]
    if n == 0:
        raise ValueError("signature kernel needs at least one shingle hash")
    out = np.empty(p, dtype=np.uint64)
    cdef uint64_t[::1] out_v = out
    cdef Py_ssize_t i, j
    cdef uint64_t best, v, key
    with nogil:
        for j in range(p):
            key = keys[j]
            best = <uint64_t>0xFFFFFFFFFFFFFFFFUL
            for i in range(n):
                v = _mix64(hashes[i] ^ key)
                if v < best:
                    best = v
            out_v[j] = best
    return out
