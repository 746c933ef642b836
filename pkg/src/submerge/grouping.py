"""Subword grouping: map each subtoken position to its lexeme group.

Positions carrying the same word id form one group; special positions
(word id -1) are singleton groups. group_subwords is the vectorized route
(boundary indicator + prefix sum, dispatched through the kernel backends);
group_subwords_naive is an intentionally boring run-finder kept as the
differential oracle. Never swap one for the other.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

SPECIAL_ID = kernels.SPECIAL_ID


@dataclass(frozen=True)
class WordIdBatch:
    """(B, N) int64 word ids; -1 marks specials and padding.

    Within each row the non-negative ids must be non-decreasing: subtokens of
    one lexeme are contiguous and lexemes appear in order.
    """

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2:
            raise ValueError(f"word ids must be 2-D, got shape {rows.shape}")
        if rows.size and rows.min() < SPECIAL_ID:
            raise ValueError("word ids must be >= -1")
        real = rows >= 0
        for b in range(rows.shape[0]):
            ids = rows[b][real[b]]
            if ids.size > 1 and np.any(np.diff(ids) < 0):
                raise ValueError(f"word ids in row {b} are not non-decreasing: {rows[b].tolist()}")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_sequences(cls, sequences, pad_to=None):
        """Build from per-sample lists of (int | None); None -> -1, right-padded with -1."""
        n = pad_to if pad_to is not None else max((len(s) for s in sequences), default=0)
        rows = np.full((len(sequences), n), SPECIAL_ID, dtype=np.int64)
        for b, seq in enumerate(sequences):
            if len(seq) > n:
                raise ValueError(f"sequence {b} longer than pad_to ({len(seq)} > {n})")
            for j, w in enumerate(seq):
                rows[b, j] = SPECIAL_ID if w is None else int(w)
        return cls(rows)

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True)
class GroupIndices:
    """(B, N) int64 group index per position plus per-row group counts.

    Each row starts at 0 and is non-decreasing with steps of at most 1;
    group_counts[b] is rows[b, -1] + 1 (0 for an empty row).
    """

    rows: np.ndarray
    group_counts: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        counts = np.asarray(self.group_counts, dtype=np.int64)
        if rows.ndim != 2 or counts.shape != (rows.shape[0],):
            raise ValueError(
                f"bad group index shapes: rows {rows.shape}, counts {counts.shape}"
            )
        if rows.shape[1] > 0 and rows.shape[0] > 0:
            if np.any(rows[:, 0] != 0):
                raise ValueError("each group row must start at 0")
            steps = np.diff(rows, axis=1)
            if steps.size and (steps.min() < 0 or steps.max() > 1):
                raise ValueError("group indices must be non-decreasing with steps <= 1")
            if np.any(counts != rows[:, -1] + 1):
                raise ValueError("group_counts must equal last index + 1")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "group_counts", counts)

    @classmethod
    def from_rows(cls, rows):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.shape[0] == 0 or rows.shape[1] == 0:
            counts = np.zeros(rows.shape[0], dtype=np.int64)
        else:
            counts = rows[:, -1] + 1
        return cls(rows, counts)


def group_subwords(batch):
    """Vectorized grouping of a WordIdBatch (kernel-backed)."""
    if batch.rows.shape[0] == 0:
        return GroupIndices.from_rows(np.empty(batch.rows.shape, dtype=np.int64))
    if batch.rows.shape[1] == 0:
        raise ValueError("cannot group zero-length rows")
    return GroupIndices.from_rows(kernels.group_ids(batch.rows))


def group_subwords_naive(batch):
    """Reference grouping via explicit run finding. Oracle only; keep slow."""
    rows = batch.rows
    n_rows, n = rows.shape
    if n_rows == 0:
        return GroupIndices.from_rows(np.empty(rows.shape, dtype=np.int64))
    if n == 0:
        raise ValueError("cannot group zero-length rows")
    out = np.empty_like(rows)
    for b in range(n_rows):
        runs = []
        j = 0
        while j < n:
            if rows[b, j] == SPECIAL_ID:
                runs.append((j, j + 1))
                j += 1
            else:
                k = j
                while k + 1 < n and rows[b, k + 1] == rows[b, j]:
                    k += 1
                runs.append((j, k + 1))
                j = k + 1
        for gid, (start, stop) in enumerate(runs):
            out[b, start:stop] = gid
    return GroupIndices.from_rows(out)


def merged_lengths(groups, valid_lens):
    """Number of groups covering the first valid_lens[b] positions of each row."""
    valid_lens = np.asarray(valid_lens, dtype=np.int64)
    rows = groups.rows
    if valid_lens.shape != (rows.shape[0],):
        raise ValueError(
            f"valid_lens shape {valid_lens.shape} does not match batch {rows.shape[0]}"
        )
    if valid_lens.size and (valid_lens.min() < 0 or valid_lens.max() > rows.shape[1]):
        raise ValueError("valid lengths out of range")
    out = np.zeros_like(valid_lens)
    nonempty = valid_lens > 0
    idx = np.where(nonempty, valid_lens - 1, 0)
    taken = rows[np.arange(rows.shape[0]), idx] + 1
    out[nonempty] = taken[nonempty]
    return out
