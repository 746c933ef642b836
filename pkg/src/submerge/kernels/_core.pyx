# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled kernel backend: grouping scan and segmented reductions.

Mirrors submerge.kernels._numpy function-for-function. Typed memoryviews only;
numpy is used at the Python level for allocation, so no numpy C headers are
required at build time.
"""

import numpy as np

from libc.stdint cimport int64_t

SPECIAL_ID = -1
DEF SENTINEL = -2


def group_ids(const int64_t[:, :] word_rows):
    cdef Py_ssize_t b = word_rows.shape[0]
    cdef Py_ssize_t n = word_rows.shape[1]
    out_arr = np.empty((b, n), dtype=np.int64)
    cdef int64_t[:, :] out = out_arr
    cdef Py_ssize_t i, j
    cdef int64_t prev, gid, w
    for i in range(b):
        prev = SENTINEL
        gid = -1
        for j in range(n):
            w = word_rows[i, j]
            if w != prev or w == -1:
                gid += 1
            out[i, j] = gid
            prev = w
    return out_arr


def segment_sum(const double[:, :, :] values, const int64_t[:, :] segments,
                Py_ssize_t num_segments):
    cdef Py_ssize_t b = values.shape[0]
    cdef Py_ssize_t n = values.shape[1]
    cdef Py_ssize_t d = values.shape[2]
    out_arr = np.zeros((b, num_segments, d), dtype=np.float64)
    cdef double[:, :, :] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef int64_t s
    for i in range(b):
        for j in range(n):
            s = segments[i, j]
            for k in range(d):
                out[i, s, k] += values[i, j, k]
    return out_arr


def segment_max(const double[:, :, :] values, const int64_t[:, :] segments,
                Py_ssize_t num_segments):
    cdef Py_ssize_t b = values.shape[0]
    cdef Py_ssize_t n = values.shape[1]
    cdef Py_ssize_t d = values.shape[2]
    out_arr = np.zeros((b, num_segments, d), dtype=np.float64)
    arg_arr = np.full((b, num_segments, d), -1, dtype=np.int64)
    cdef double[:, :, :] out = out_arr
    cdef int64_t[:, :, :] arg = arg_arr
    cdef Py_ssize_t i, j, k
    cdef int64_t s
    cdef double v
    for i in range(b):
        for j in range(n):
            s = segments[i, j]
            for k in range(d):
                v = values[i, j, k]
                if arg[i, s, k] < 0 or v > out[i, s, k]:
                    out[i, s, k] = v
                    arg[i, s, k] = j
    return out_arr, arg_arr


def segment_counts(const int64_t[:, :] segments, Py_ssize_t num_segments):
    cdef Py_ssize_t b = segments.shape[0]
    cdef Py_ssize_t n = segments.shape[1]
    out_arr = np.zeros((b, num_segments), dtype=np.int64)
    cdef int64_t[:, :] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(b):
        for j in range(n):
            out[i, segments[i, j]] += 1
    return out_arr
