"""Merge layer: per-group loop oracles, the mean/learnable relationship,
hand-computed attention weights, and finite-difference gradients."""

import numpy as np
import pytest

from submerge import autodiff as ad
from submerge.grouping import WordIdBatch, group_subwords
from submerge.merging import (
    HiddenBatch,
    MergeStrategy,
    merge_backward,
    merge_forward,
    merge_learnable,
    merge_mean,
    merge_op,
)


def make_case(rng, b=3, n=10, d=4, special_p=0.2):
    """Random hidden batch + groups with trailing padding (word id -1)."""
    lens = rng.integers(1, n + 1, size=b)
    lens[0] = n  # keep at least one full row
    word_rows = np.full((b, n), -1, dtype=np.int64)
    for i in range(b):
        starts = rng.random(lens[i]) < 0.4
        starts[0] = True
        ids = np.cumsum(starts) - 1
        ids[rng.random(lens[i]) < special_p] = -1
        # specials break runs; re-sort the non-negative part to keep it valid
        real = np.sort(ids[ids >= 0])
        ids[ids >= 0] = real
        word_rows[i, : lens[i]] = ids
    values = rng.normal(size=(b, n, d))
    mask = np.arange(n)[None, :] < lens[:, None]
    values[~mask] = 0.0
    groups = group_subwords(WordIdBatch(word_rows))
    return HiddenBatch(values, mask), groups


def loop_merge(x, groups, strategy):
    """Group-by-group reference merge, one python loop per group."""
    values, mask = x.values, x.mask
    b, n, d = values.shape
    lens = x.valid_lengths
    merged_rows = []
    alpha_rows = []
    for i in range(b):
        row = []
        arow = np.zeros(n)
        gids = groups.rows[i, : lens[i]]
        for gid in range(int(gids.max()) + 1 if lens[i] else 0):
            members = np.nonzero(gids == gid)[0]
            xs = values[i, members]
            if strategy.kind == "mean":
                row.append(xs.mean(axis=0))
            else:
                z = xs @ strategy.w
                e = np.exp(z - z.max())
                alpha = e / e.sum()
                arow[members] = alpha
                row.append((alpha[:, None] * xs).sum(axis=0))
        merged_rows.append(row)
    n_prime = max(len(r) for r in merged_rows)
    out = np.zeros((b, n_prime, d))
    out_mask = np.zeros((b, n_prime), dtype=bool)
    for i, row in enumerate(merged_rows):
        for g, vec in enumerate(row):
            out[i, g] = vec
            out_mask[i, g] = True
        alpha_rows.append(arow)
    return out, out_mask


class TestForward:
    def test_mean_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, groups = make_case(rng)
            got = merge_mean(x, groups)
            want, want_mask = loop_merge(x, groups, MergeStrategy.mean())
            np.testing.assert_array_equal(got.mask, want_mask)
            np.testing.assert_allclose(got.values, want, rtol=0, atol=1e-12)

    def test_learnable_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x, groups = make_case(rng)
            w = rng.normal(size=x.values.shape[2])
            got = merge_learnable(x, groups, w)
            want, want_mask = loop_merge(x, groups, MergeStrategy.learnable(w))
            np.testing.assert_array_equal(got.mask, want_mask)
            np.testing.assert_allclose(got.values, want, rtol=0, atol=1e-12)

    def test_learnable_with_zero_w_equals_mean(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, groups = make_case(rng)
            mean = merge_mean(x, groups)
            learn = merge_learnable(x, groups, np.zeros(x.values.shape[2]))
            np.testing.assert_allclose(learn.values, mean.values, rtol=0, atol=1e-12)

    def test_alphas_sum_to_one_per_group(self):
        rng = np.random.default_rng(3)
        x, groups = make_case(rng, b=4, n=12)
        w = rng.normal(size=x.values.shape[2])
        got = merge_learnable(x, groups, w)
        lens = x.valid_lengths
        for i in range(4):
            gids = groups.rows[i, : lens[i]]
            for gid in np.unique(gids):
                total = got.alphas[i, : lens[i]][gids == gid].sum()
                assert total == pytest.approx(1.0, abs=1e-6)

    def test_alphas_zero_at_padding(self):
        rng = np.random.default_rng(4)
        x, groups = make_case(rng)
        got = merge_learnable(x, groups, rng.normal(size=x.values.shape[2]))
        assert np.all(got.alphas[~x.mask] == 0.0)

    def test_hand_computed_two_member_group(self):
        # one group of two vectors; score gap ln 3 gives alphas (0.75, 0.25)
        w = np.array([1.0, 0.0])
        gap = np.log(3.0)
        values = np.array([[[gap, 1.0], [0.0, 3.0]]])
        x = HiddenBatch(values, np.ones((1, 2), dtype=bool))
        groups = group_subwords(WordIdBatch(np.array([[0, 0]])))
        got = merge_learnable(x, groups, w)
        np.testing.assert_allclose(got.alphas[0], [0.75, 0.25], atol=1e-12)
        np.testing.assert_allclose(
            got.values[0, 0], 0.75 * values[0, 0] + 0.25 * values[0, 1], atol=1e-12
        )

    def test_singleton_groups_pass_through(self):
        rng = np.random.default_rng(5)
        values = rng.normal(size=(1, 4, 3))
        x = HiddenBatch(values, np.ones((1, 4), dtype=bool))
        groups = group_subwords(WordIdBatch(np.array([[-1, -1, -1, -1]])))
        got = merge_learnable(x, groups, rng.normal(size=3))
        np.testing.assert_allclose(got.values, values, atol=1e-12)

    def test_padding_rows_are_zero_and_masked(self):
        rng = np.random.default_rng(6)
        # row 0 merges to fewer groups than row 1
        word_rows = np.array([[0, 0, 0, 1], [0, 1, 2, 3]])
        values = rng.normal(size=(2, 4, 2))
        x = HiddenBatch(values, np.ones((2, 4), dtype=bool))
        got = merge_mean(x, group_subwords(WordIdBatch(word_rows)))
        assert got.values.shape == (2, 4, 2)
        assert got.mask.tolist() == [[True, True, False, False], [True] * 4]
        np.testing.assert_array_equal(got.values[0, 2:], 0.0)

    def test_group_spanning_padding_boundary_rejected(self):
        values = np.zeros((1, 4, 2))
        mask = np.array([[True, True, False, False]])
        # word id 0 covers positions 1..2, crossing the boundary at 2
        groups = group_subwords(WordIdBatch(np.array([[-1, 0, 0, -1]])))
        with pytest.raises(ValueError, match="spanning"):
            merge_mean(HiddenBatch(values, mask), groups)

    def test_mask_must_be_prefix(self):
        with pytest.raises(ValueError, match="prefix"):
            HiddenBatch(np.zeros((1, 3, 2)), np.array([[True, False, True]]))

    def test_strategy_validation(self):
        with pytest.raises(ValueError, match="unknown merge kind"):
            MergeStrategy("max")
        with pytest.raises(ValueError, match="no weight"):
            MergeStrategy("mean", np.ones(3))
        with pytest.raises(ValueError, match="vector"):
            MergeStrategy.learnable(np.ones((2, 2)))


class TestBackward:
    def test_mean_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x, groups = make_case(rng, b=2, n=8, d=3)
        xt = ad.Tensor(x.values.copy(), "x")
        proj = rng.normal(size=(2, 1))

        def build():
            merged, _ = merge_op(xt, x.mask, groups, "mean")
            return ad.reduce_sum(ad.mul(merged, merged))

        ad.check_gradients(build, [xt])
        # gradient at padding positions must be zero
        with ad.Tape() as tape:
            loss = build()
        g = ad.backward(loss, tape, [xt])[xt]
        assert np.all(g[~x.mask] == 0.0)

    def test_learnable_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x, groups = make_case(rng, b=2, n=8, d=3)
        xt = ad.Tensor(x.values.copy(), "x")
        wt = ad.Tensor(rng.normal(size=3), "w")

        def build():
            merged, _ = merge_op(xt, x.mask, groups, "learnable", w=wt)
            return ad.reduce_sum(ad.mul(merged, merged))

        ad.check_gradients(build, [xt, wt])

    def test_backward_ignores_grad_in_padded_group_slots(self):
        # short row: its pad-group slots receive garbage grad that must not leak
        word_rows = np.array([[0, 0, 1, 2], [0, 1, -1, -1]])
        values = np.random.default_rng(9).normal(size=(2, 4, 2))
        mask = np.array([[True] * 4, [True, True, False, False]])
        values[~mask] = 0.0
        groups = group_subwords(WordIdBatch(word_rows))
        x = HiddenBatch(values, mask)
        _, cache = merge_forward(x, groups, MergeStrategy.mean())
        grad_out = np.full((2, 3, 2), 7.0)
        gx, gw = merge_backward(grad_out, cache)
        assert gw is None
        assert np.all(gx[1, 2:] == 0.0)

    def test_backward_shape_check(self):
        x, groups = make_case(np.random.default_rng(10), b=2, n=6, d=3)
        _, cache = merge_forward(x, groups, MergeStrategy.mean())
        with pytest.raises(ValueError, match="grad shape"):
            merge_backward(np.zeros((2, 99, 3)), cache)

    def test_merge_op_requires_w_for_learnable(self):
        x, groups = make_case(np.random.default_rng(11), b=1, n=4, d=2)
        with pytest.raises(ValueError, match="weight tensor"):
            merge_op(ad.Tensor(x.values), x.mask, groups, "learnable")
