"""Pure-numpy kernel backend.

These are the reference implementations of the hot loops: the subword grouping
scan and the segmented reductions used by the merge layer. The compiled
backend in _core.pyx mirrors this module function-for-function; both are
dispatched through submerge.kernels.
"""

import numpy as np

# Word ids are non-negative; -1 marks specials/padding. -2 never appears in
# input and is prepended as the "before position 0" sentinel so the first
# position always opens a group.
SPECIAL_ID = -1
_SENTINEL = -2


def group_ids(word_rows):
    """Group index per position for a batch of word-id rows.

    A new group opens wherever the word id differs from its left neighbour or
    the position is a special (-1). Vectorized as: boundary indicator, then an
    inclusive prefix sum minus one.
    """
    b, n = word_rows.shape
    prev = np.empty_like(word_rows)
    prev[:, 0] = _SENTINEL
    prev[:, 1:] = word_rows[:, :-1]
    boundary = (word_rows != prev) | (word_rows == SPECIAL_ID)
    return np.cumsum(boundary, axis=1, dtype=np.int64) - 1


def segment_sum(values, segments, num_segments):
    """Sum (b, n, d) values into (b, num_segments, d) buckets per row."""
    b, n, d = values.shape
    out = np.zeros((b, num_segments, d), dtype=np.float64)
    if n == 0 or b == 0:
        return out
    flat_idx = (segments + np.arange(b, dtype=np.int64)[:, None] * num_segments).ravel()
    np.add.at(out.reshape(b * num_segments, d), flat_idx, values.reshape(b * n, d))
    return out


def segment_max(values, segments, num_segments):
    """Per-segment max of (b, n, d) values, plus the argmax position.

    Returns (maxima, argmax) with shapes (b, num_segments, d). Ties resolve to
    the first (lowest-index) position attaining the max. Empty segments get
    max 0.0 and argmax -1.
    """
    b, n, d = values.shape
    out = np.full((b, num_segments, d), -np.inf, dtype=np.float64)
    arg = np.full((b, num_segments, d), n, dtype=np.int64)
    if n > 0 and b > 0:
        flat_idx = (segments + np.arange(b, dtype=np.int64)[:, None] * num_segments).ravel()
        np.maximum.at(out.reshape(b * num_segments, d), flat_idx, values.reshape(b * n, d))
        # First position in each segment whose value equals the segment max.
        seg_max_at_pos = np.take_along_axis(out, segments[:, :, None], axis=1)
        pos = np.where(values == seg_max_at_pos, np.arange(n, dtype=np.int64)[None, :, None], n)
        np.minimum.at(arg.reshape(b * num_segments, d), flat_idx, pos.reshape(b * n, d))
    empty = arg == n
    arg[empty] = -1
    out[empty] = 0.0
    return out, arg


def segment_counts(segments, num_segments):
    """Number of positions landing in each segment, shape (b, num_segments)."""
    b, n = segments.shape
    if b == 0 or n == 0:
        return np.zeros((b, num_segments), dtype=np.int64)
    flat_idx = (segments + np.arange(b, dtype=np.int64)[:, None] * num_segments).ravel()
    counts = np.bincount(flat_idx, minlength=b * num_segments)
    return counts.reshape(b, num_segments).astype(np.int64)
