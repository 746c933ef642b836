"""Merge subtoken vectors group-wise back to one vector per lexeme.

Two strategies:
  mean       X'_i = (1/|S_i|) sum_{j in S_i} X_j
  learnable  alpha_j = softmax over the group of w . X_j,  X'_i = sum alpha_j X_j

merge_forward/merge_backward are the numpy core with an explicit cache (the
backward is hand-derived and finite-difference-checked in the tests);
merge_op wraps the pair as a tape primitive. Pad groups are dropped: output
rows are re-padded to the longest merged length in the batch with mask False
and value 0.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .grouping import merged_lengths

MERGE_KINDS = ("mean", "learnable")


@dataclass(frozen=True)
class MergeStrategy:
    """Which merge to apply; learnable carries its score vector w."""

    kind: str
    w: np.ndarray = None

    def __post_init__(self):
        if self.kind not in MERGE_KINDS:
            raise ValueError(f"unknown merge kind {self.kind!r}, want one of {MERGE_KINDS}")
        if self.kind == "learnable":
            w = np.asarray(self.w, dtype=np.float64)
            if w.ndim != 1:
                raise ValueError(f"w must be a vector, got shape {w.shape}")
            object.__setattr__(self, "w", w)
        elif self.w is not None:
            raise ValueError("mean merge takes no weight vector")

    @classmethod
    def mean(cls):
        return cls("mean")

    @classmethod
    def learnable(cls, w):
        return cls("learnable", w)


@dataclass(frozen=True)
class HiddenBatch:
    """(B, N, d) float64 hidden states with a (B, N) validity mask.

    Valid positions must form a prefix of each row (padding trails).
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 3:
            raise ValueError(f"values must be (B, N, d), got {values.shape}")
        if mask.shape != values.shape[:2]:
            raise ValueError(
                f"mask shape {mask.shape} does not match values {values.shape[:2]}"
            )
        if mask.shape[1] > 1 and np.any(mask[:, 1:] & ~mask[:, :-1]):
            raise ValueError("mask must be a prefix of True values per row")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def valid_lengths(self):
        return self.mask.sum(axis=1).astype(np.int64)


@dataclass(frozen=True)
class MergedBatch:
    """Merged hidden states (B, N', d), their mask, and the attention weights.

    alphas is None for the mean strategy; otherwise (B, N) with the weight
    each input position contributed to its group (0 at padding).
    """

    values: np.ndarray
    mask: np.ndarray
    alphas: np.ndarray


@dataclass
class MergeCache:
    """Forward state needed by merge_backward."""

    kind: str
    x: np.ndarray
    group_rows: np.ndarray
    out_mask: np.ndarray
    counts: np.ndarray
    alphas_full: np.ndarray
    w: np.ndarray


def _check_group_alignment(x, groups):
    """Valid and pad positions must not share a group."""
    lens = x.valid_lengths
    rows = groups.rows
    b, n = rows.shape
    boundary = (lens > 0) & (lens < n)
    bad = boundary & (
        rows[np.arange(b), np.clip(lens - 1, 0, n - 1)]
        == rows[np.arange(b), np.clip(lens, 0, n - 1)]
    )
    if np.any(bad):
        raise ValueError(
            f"rows {np.nonzero(bad)[0].tolist()} have a group spanning the "
            "valid/padding boundary"
        )


def merge_forward(x, groups, strategy):
    """Merge x group-wise; returns (MergedBatch, MergeCache).

    Rows are left-compacted to their valid groups and re-padded to the batch
    maximum merged length with mask False / value 0.
    """
    values, mask = x.values, x.mask
    b, n, d = values.shape
    if groups.rows.shape != (b, n):
        raise ValueError(
            f"group shape {groups.rows.shape} does not match hidden {values.shape[:2]}"
        )
    _check_group_alignment(x, groups)
    rows = groups.rows
    lens = x.valid_lengths
    n_groups = merged_lengths(groups, lens)
    n_prime = int(n_groups.max()) if b else 0
    total = int(groups.group_counts.max()) if b else 0

    counts = kernels.segment_counts(rows, total)
    out_mask = np.arange(n_prime)[None, :] < n_groups[:, None]

    if strategy.kind == "mean":
        sums = kernels.segment_sum(values, rows, total)
        merged = sums / np.maximum(counts, 1)[:, :, None]
        alphas_full = None
    else:
        w = strategy.w
        if w.shape != (d,):
            raise ValueError(f"w shape {w.shape} does not match d_model {d}")
        scores = values @ w
        smax, _ = kernels.segment_max(scores[:, :, None], rows, total)
        shifted = scores - np.take_along_axis(smax[:, :, 0], rows, axis=1)
        e = np.exp(shifted)
        denom = kernels.segment_sum(e[:, :, None], rows, total)[:, :, 0]
        alphas_full = e / np.take_along_axis(denom, rows, axis=1)
        merged = kernels.segment_sum(values * alphas_full[:, :, None], rows, total)

    merged = np.where(out_mask[:, :, None], merged[:, :n_prime], 0.0)
    cache = MergeCache(
        kind=strategy.kind,
        x=values,
        group_rows=rows,
        out_mask=out_mask,
        counts=counts,
        alphas_full=alphas_full,
        w=strategy.w,
    )
    alphas = None if alphas_full is None else np.where(mask, alphas_full, 0.0)
    return MergedBatch(merged, out_mask, alphas), cache


def merge_mean(x, groups):
    """Mean merge, forward only."""
    out, _ = merge_forward(x, groups, MergeStrategy.mean())
    return out


def merge_learnable(x, groups, w):
    """Attention merge with score vector w, forward only."""
    out, _ = merge_forward(x, groups, MergeStrategy.learnable(w))
    return out


def merge_backward(grad_out, cache):
    """Gradients of the merge: returns (grad_x, grad_w) with grad_w None for mean.

    Derivation for the learnable merge, per group i with members j:
      z_j = w.x_j, alpha = softmax(z), out = sum alpha_j x_j
      u_j = grad_out_{g(j)},  s_j = u_j . x_j,  sbar_i = sum_k alpha_k s_k
      dz_j = alpha_j (s_j - sbar_i)
      grad_x_j = alpha_j u_j + dz_j w,  grad_w = sum_j dz_j x_j
    """
    rows = cache.group_rows
    b, n = rows.shape
    d = cache.x.shape[2]
    n_prime = cache.out_mask.shape[1]
    if grad_out.shape != (b, n_prime, d):
        raise ValueError(
            f"grad shape {grad_out.shape} does not match merged ({b}, {n_prime}, {d})"
        )
    total = cache.counts.shape[1]
    g = np.zeros((b, total, d), dtype=np.float64)
    g[:, :n_prime] = np.where(cache.out_mask[:, :, None], grad_out, 0.0)
    u = np.take_along_axis(g, rows[:, :, None], axis=1)

    if cache.kind == "mean":
        denom = np.take_along_axis(np.maximum(cache.counts, 1), rows, axis=1)
        return u / denom[:, :, None], None

    alphas = cache.alphas_full
    s = (u * cache.x).sum(axis=2)
    sbar = kernels.segment_sum((alphas * s)[:, :, None], rows, total)[:, :, 0]
    dz = alphas * (s - np.take_along_axis(sbar, rows, axis=1))
    grad_x = alphas[:, :, None] * u + dz[:, :, None] * cache.w[None, None, :]
    grad_w = (dz[:, :, None] * cache.x).sum(axis=(0, 1))
    return grad_x, grad_w


def merge_op(x, mask, groups, strategy_kind, w=None):
    """Tape-recorded merge over a hidden Tensor.

    x is an autodiff Tensor (B, N, d); w, when the strategy is learnable, is
    the score-vector Tensor. Returns (merged Tensor, merged mask array).
    """
    if strategy_kind == "learnable":
        if w is None:
            raise ValueError("learnable merge needs the weight tensor w")
        strategy = MergeStrategy.learnable(w.data)
    else:
        strategy = MergeStrategy.mean()
    merged, cache = merge_forward(HiddenBatch(x.data, mask), groups, strategy)
    out = ad.Tensor(merged.values)

    if strategy_kind == "learnable":

        def grad_fn(g):
            return merge_backward(g, cache)

        ad.record(out, (x, w), grad_fn)
    else:

        def grad_fn(g):
            gx, _ = merge_backward(g, cache)
            return (gx,)

        ad.record(out, (x,), grad_fn)
    return out, merged.mask
