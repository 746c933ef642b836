"""The acceptance gate: thirteen numbered checks, one printed verdict each.

Run with `pytest -s tests/test_acceptance.py` to see the `[criterion NN]`
lines. Every tolerance is pinned inline. Two sub-claims of the checklist
are arithmetically unreachable as stated; they stay here as strict xfails
whose messages carry the honest numbers, instead of being loosened.
"""

import csv
import json
import math
import time

import numpy as np
import pytest

from submerge import autodiff as ad
from submerge.cli import main as cli_main
from submerge.flops import (
    count_encoder_flops,
    encoder_layer_flops,
    length_schedule,
    merged_encoder_flops,
    savings_ratio,
)
from submerge.grouping import (
    WordIdBatch,
    group_subwords,
    group_subwords_naive,
    merged_lengths,
)
from submerge.merging import HiddenBatch, merge_learnable, merge_mean, merge_op
from submerge.pareto import (
    ConfigPoint,
    efficiency_frontier,
    knee_distances,
    knee_point,
)
from submerge.sweep import run_sweep
from submerge.training import (
    ExperimentConfig,
    eval_flops,
    evaluate,
    prepare_task,
    train,
)
from submerge.transformer import (
    MergeSpec,
    ModelConfig,
    ModelParams,
    PaddedBatch,
    classify,
    encode,
)


def _line(num, ok, detail, expected_fail=False):
    status = "FAIL (expected)" if expected_fail else ("PASS" if ok else "FAIL")
    print(f"[criterion {num:02d}] {status}  {detail}")


def _random_word_rows(rng, b, n):
    """Random legal word-id rows: -1 specials, non-decreasing ids elsewhere."""
    rows = np.full((b, n), -1, dtype=np.int64)
    for i in range(b):
        word = -1
        for p in range(n):
            r = rng.random()
            if r < 0.25:
                continue  # leave a special / padding slot
            if word < 0 or r < 0.6:
                word += 1
            rows[i, p] = word
    return rows


# ---------------------------------------------------------------------------
# 1-2: grouping


def test_criterion_01_vectorized_grouping_matches_naive():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    for _ in range(1000):
        b = int(rng.integers(1, 9))
        n = int(rng.integers(1, 65))
        batch = WordIdBatch(_random_word_rows(rng, b, n))
        fast = group_subwords(batch)
        slow = group_subwords_naive(batch)
        assert np.array_equal(fast.rows, slow.rows)
        assert np.array_equal(fast.group_counts, slow.group_counts)
    elapsed = time.perf_counter() - t0
    ok = elapsed < 5.0
    _line(1, ok, f"1000 random batches (B<=8, N<=64) agree exactly, {elapsed:.2f}s < 5s")
    assert ok, f"grouping differential took {elapsed:.2f}s"


def test_criterion_02_frozen_grouping_example():
    groups = group_subwords(WordIdBatch(np.array([[-1, 1, 1, 2, -1]])))
    got = groups.rows.tolist()[0]
    ok = got == [0, 1, 1, 2, 3]
    _line(2, ok, f"word ids [-1, 1, 1, 2, -1] -> groups {got}")
    assert ok, got


# ---------------------------------------------------------------------------
# 3: merge forward against nested-loop oracles


def _random_hidden(rng, b, n, d):
    lens = rng.integers(1, n + 1, size=b)
    lens[int(rng.integers(0, b))] = n  # keep one full row
    values = rng.standard_normal((b, n, d))
    mask = np.arange(n)[None, :] < lens[:, None]
    word_rows = np.full((b, n), -1, dtype=np.int64)
    for i in range(b):
        word = -1
        for p in range(int(lens[i])):
            r = rng.random()
            if r < 0.25:
                continue
            if word < 0 or r < 0.6:
                word += 1
            word_rows[i, p] = word
    return values, mask, word_rows, lens


def _loop_group_mean(values, word_rows, lens):
    """Arithmetic mean per group, by explicit member lists (the oracle)."""
    groups = group_subwords_naive(WordIdBatch(word_rows))
    n_groups = merged_lengths(groups, lens)
    b, _, d = values.shape
    out = np.zeros((b, int(n_groups.max()), d))
    for i in range(b):
        for g in range(int(n_groups[i])):
            members = [p for p in range(int(lens[i])) if groups.rows[i, p] == g]
            out[i, g] = values[i, members].mean(axis=0)
    return out, n_groups


def test_criterion_03_merge_matches_loop_oracles():
    rng = np.random.default_rng(33)
    worst_mean = worst_w0 = worst_alpha = 0.0
    for _ in range(500):
        b = int(rng.integers(1, 7))
        n = int(rng.integers(1, 25))
        d = int(rng.integers(1, 9))
        values, mask, word_rows, lens = _random_hidden(rng, b, n, d)
        x = HiddenBatch(values, mask)
        groups = group_subwords(WordIdBatch(word_rows))
        oracle, n_groups = _loop_group_mean(values, word_rows, lens)

        got_mean = merge_mean(x, groups)
        assert got_mean.values.shape == oracle.shape
        worst_mean = max(worst_mean, float(np.abs(got_mean.values - oracle).max()))

        got_w0 = merge_learnable(x, groups, np.zeros(d))
        worst_w0 = max(
            worst_w0, float(np.abs(got_w0.values - got_mean.values).max())
        )

        got_w = merge_learnable(x, groups, rng.standard_normal(d))
        for i in range(b):
            row = groups.rows[i, : int(lens[i])]
            alphas = got_w.alphas[i, : int(lens[i])]
            for g in range(int(n_groups[i])):
                s = float(alphas[row == g].sum())
                worst_alpha = max(worst_alpha, abs(s - 1.0))

    ok = worst_mean <= 1e-12 and worst_w0 <= 1e-12 and worst_alpha <= 1e-6
    _line(
        3,
        ok,
        f"500 cases: |mean - loop oracle| <= {worst_mean:.1e} (1e-12), "
        f"|learnable(w=0) - mean| <= {worst_w0:.1e} (1e-12), "
        f"group alpha sums off 1 by <= {worst_alpha:.1e} (1e-6)",
    )
    assert ok, (worst_mean, worst_w0, worst_alpha)


# ---------------------------------------------------------------------------
# 4: finite-difference gradient checks


def test_criterion_04_gradient_checks():
    rng = np.random.default_rng(44)
    t0 = time.perf_counter()
    worst = 0.0
    checked = []

    def t(*shape):
        return ad.Tensor(rng.standard_normal(shape))

    def wsum(out, c):
        return ad.reduce_sum(ad.mul(out, c))

    def run(name, params, build):
        nonlocal worst
        worst = max(worst, ad.check_gradients(build, params, eps=1e-5, rtol=1e-4))
        checked.append(name)

    a, b, c = t(3, 4), t(4, 2), t(3, 2)
    run("matmul", [a, b], lambda: wsum(ad.matmul(a, b), c))
    a2, b2, c2 = t(2, 3, 4), t(4, 5), t(2, 3, 5)
    run("matmul batched", [a2, b2], lambda: wsum(ad.matmul(a2, b2), c2))

    x1, bias, c3 = t(2, 3, 4), t(4), t(2, 3, 4)
    run("add", [x1, bias], lambda: wsum(ad.add(x1, bias), c3))

    m1, m2 = t(3, 4), t(3, 4)
    run("mul", [m1, m2], lambda: ad.reduce_sum(ad.mul(m1, m2)))

    s1, cs = t(2, 5), t(2, 5)
    run("scale", [s1], lambda: wsum(ad.scale(s1, -1.7), cs))

    r_data = rng.standard_normal((3, 4))
    r_data[np.abs(r_data) < 0.2] = 0.5  # stay clear of the kink
    r1, cr = ad.Tensor(r_data), t(3, 4)
    run("relu", [r1], lambda: wsum(ad.relu(r1), cr))

    rs = t(2, 3)
    run("reduce_sum", [rs], lambda: ad.reduce_sum(rs))

    tr, ctr = t(2, 3, 4), t(2, 4, 3)
    run("transpose_last2", [tr], lambda: wsum(ad.transpose_last2(tr), ctr))

    sm, csm = t(2, 3, 5), t(2, 3, 5)
    run("softmax_lastdim", [sm], lambda: wsum(ad.softmax_lastdim(sm), csm))

    mf, cmf = t(2, 6), t(2, 6)
    drop = np.zeros((2, 6), dtype=bool)
    drop[:, 4:] = True
    run("masked_fill", [mf], lambda: wsum(ad.masked_fill(mf, drop, 3.0), cmf))

    ln_x, cln = t(2, 4, 6), t(2, 4, 6)
    gamma = ad.Tensor(rng.uniform(0.5, 1.5, size=6))
    beta = t(6)
    run(
        "layernorm_lastdim",
        [ln_x, gamma, beta],
        lambda: wsum(ad.layernorm_lastdim(ln_x, gamma, beta), cln),
    )

    table, cemb = t(7, 4), t(2, 4, 4)
    ids = np.array([[0, 2, 2, 5], [1, 6, 3, 1]])
    run("embedding_lookup", [table], lambda: wsum(ad.embedding_lookup(table, ids), cemb))

    sh, csh = t(2, 4, 8), t(2, 2, 4, 4)
    run("split_heads", [sh], lambda: wsum(ad.split_heads(sh, 2), csh))
    jh, cjh = t(2, 2, 4, 4), t(2, 4, 8)
    run("join_heads", [jh], lambda: wsum(ad.join_heads(jh), cjh))

    ca, cb, cc = t(2, 3, 4), t(2, 3, 2), t(2, 3, 6)
    run("concat_lastdim", [ca, cb], lambda: wsum(ad.concat_lastdim(ca, cb), cc))

    sp, csp = t(2, 5, 4), t(2, 4)
    run("select_position", [sp], lambda: wsum(ad.select_position(sp, 3), csp))

    seg_rows = np.array([[0, 0, 1, 2, 2, 3], [0, 1, 1, 1, 2, 2]])
    seg, cseg = t(2, 6, 3), t(2, 4, 3)
    run("segment_sum", [seg], lambda: wsum(ad.segment_sum(seg, seg_rows, 4), cseg))

    base = rng.permutation(12).reshape(2, 6).astype(float) * 3.0
    mx = ad.Tensor((base + rng.uniform(-0.3, 0.3, size=(2, 6)))[:, :, None])
    cmx = t(2, 4, 1)
    run("segment_max", [mx], lambda: wsum(ad.segment_max(mx, seg_rows, 4), cmx))

    logits = t(4, 7)
    targets = np.array([1, 0, 6, 3])
    run("cross_entropy", [logits], lambda: ad.cross_entropy_with_logits(logits, targets))
    logits3 = t(2, 3, 7)
    tg3 = np.array([[1, 2, 0], [4, 5, 6]])
    vm = np.array([[True, True, False], [True, False, False]])
    run(
        "cross_entropy masked",
        [logits3],
        lambda: ad.cross_entropy_with_logits(logits3, tg3, valid_mask=vm),
    )

    # the merge itself, both strategies, through the taped op
    word_rows = np.array(
        [[-1, 0, 0, 1, 1, 1, 2], [-1, 0, 1, 1, -1, -1, -1]]
    )
    lens = np.array([7, 5])
    mmask = np.arange(7)[None, :] < lens[:, None]
    groups = group_subwords(WordIdBatch(word_rows))
    xm = ad.Tensor(rng.standard_normal((2, 7, 4)))
    wm = ad.Tensor(rng.standard_normal(4))
    cmerge = t(2, 4, 4)
    run(
        "merge mean",
        [xm],
        lambda: wsum(merge_op(xm, mmask, groups, "mean")[0], cmerge),
    )
    run(
        "merge learnable",
        [xm, wm],
        lambda: wsum(merge_op(xm, mmask, groups, "learnable", wm)[0], cmerge),
    )

    # the full tiny model, every trainable tensor at once
    config = ModelConfig(
        arch="classifier",
        num_layers=2,
        d_model=8,
        num_heads=2,
        d_ff=16,
        vocab_size=11,
        max_len=12,
        num_classes=3,
    )
    params = ModelParams.init(config, MergeSpec("learnable", 1), seed=404)
    params["merge.w"].data[:] = 0.1 * np.arange(8) - 0.3
    batch = PaddedBatch(
        np.array([[2, 5, 7, 9, 3], [2, 8, 4, 0, 0]]),
        np.array([[-1, 0, 0, 1, -1], [-1, 0, -1, -1, -1]]),
        np.array([5, 3]),
    )
    labels = np.array([0, 2])
    run(
        "full tiny model",
        params.trainable(),
        lambda: ad.cross_entropy_with_logits(classify(batch, params), labels),
    )

    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 60.0
    _line(
        4,
        ok,
        f"{len(checked)} checks (all primitives, merge backward both strategies, "
        f"full tiny model): max rel err {worst:.1e} <= 1e-4, {elapsed:.1f}s < 60s",
    )
    assert ok, (worst, elapsed)


# ---------------------------------------------------------------------------
# 5: forward pass against a per-token loop reference


def _ref_positional(n, d):
    out = np.zeros((n, d))
    for p in range(n):
        for j in range(d):
            angle = p / (10000.0 ** (2 * (j // 2) / d))
            out[p, j] = math.sin(angle) if j % 2 == 0 else math.cos(angle)
    return out


def _ref_layernorm(x, gamma, beta, eps=1e-5):
    return gamma * (x - x.mean()) / math.sqrt(x.var() + eps) + beta


def _ref_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def _ref_classifier_forward(params, config, ids):
    """One unpadded row, looped per position and per head."""
    n = len(ids)
    d, dk = config.d_model, config.d_k
    pe = _ref_positional(n, d)
    h = np.stack([params["embed.table"].data[t] + pe[p] for p, t in enumerate(ids)])
    for l in range(config.num_layers):
        wq, wk, wv, wo = (
            params[f"enc.{l}.attn.{w}"].data for w in ("wq", "wk", "wv", "wo")
        )
        attn = np.zeros((n, d))
        for p in range(n):
            ctx = []
            for head in range(config.num_heads):
                sl = slice(head * dk, (head + 1) * dk)
                q = (h[p] @ wq)[sl]
                scores = np.array(
                    [q @ (h[m] @ wk)[sl] / math.sqrt(dk) for m in range(n)]
                )
                alpha = _ref_softmax(scores)
                ctx.append(sum(alpha[m] * (h[m] @ wv)[sl] for m in range(n)))
            attn[p] = np.concatenate(ctx) @ wo
        h = np.stack(
            [
                _ref_layernorm(
                    h[p] + attn[p],
                    params[f"enc.{l}.ln1.gamma"].data,
                    params[f"enc.{l}.ln1.beta"].data,
                )
                for p in range(n)
            ]
        )
        ffn = np.zeros((n, d))
        for p in range(n):
            inner = np.maximum(
                h[p] @ params[f"enc.{l}.ffn.w1"].data + params[f"enc.{l}.ffn.b1"].data,
                0.0,
            )
            ffn[p] = inner @ params[f"enc.{l}.ffn.w2"].data + params[f"enc.{l}.ffn.b2"].data
        h = np.stack(
            [
                _ref_layernorm(
                    h[p] + ffn[p],
                    params[f"enc.{l}.ln2.gamma"].data,
                    params[f"enc.{l}.ln2.beta"].data,
                )
                for p in range(n)
            ]
        )
    logits = h[0] @ params["head.w"].data + params["head.b"].data
    return h, logits


def test_criterion_05_forward_matches_per_token_reference():
    config = ModelConfig(
        arch="classifier",
        num_layers=2,
        d_model=8,
        num_heads=2,
        d_ff=16,
        vocab_size=13,
        max_len=10,
        num_classes=3,
    )
    params = ModelParams.init(config, MergeSpec.none(), seed=505)
    rng = np.random.default_rng(55)
    lens = [6, 4]
    tok = np.zeros((2, 6), dtype=np.int64)
    for i, ln in enumerate(lens):
        tok[i, :ln] = rng.integers(1, config.vocab_size, size=ln)
    batch = PaddedBatch(tok, np.full((2, 6), -1), np.array(lens))

    hidden, _, _ = encode(batch, params)
    logits = classify(batch, params)
    worst = 0.0
    for i, ln in enumerate(lens):
        ref_h, ref_logits = _ref_classifier_forward(params, config, tok[i, :ln].tolist())
        worst = max(worst, float(np.abs(hidden.data[i, :ln] - ref_h).max()))
        worst = max(worst, float(np.abs(logits.data[i] - ref_logits).max()))
    ok = worst <= 1e-9
    _line(5, ok, f"B=2, N=6 hidden states and logits within {worst:.1e} of the loop reference (1e-9)")
    assert ok, worst


# ---------------------------------------------------------------------------
# 6: the FLOP cost model


TINY_FLOPS_CONFIG = ModelConfig(
    arch="classifier",
    num_layers=1,
    d_model=4,
    num_heads=1,
    d_ff=8,
    vocab_size=9,
    max_len=8,
    num_classes=2,
)


def test_criterion_06_flop_terms_and_instrumented_equality():
    config = TINY_FLOPS_CONFIG
    n, d, dff = 2, config.d_model, config.d_ff
    hand = {
        "qkv_proj": 3 * (2 * n * d * d),
        "attn_scores": 2 * n * n * d,
        "attn_apply": 2 * n * n * d,
        "out_proj": 2 * n * d * d,
        "ffnn": 2 * n * d * dff + 2 * n * dff * d,
    }
    layer = encoder_layer_flops(config, n)
    analytic = count_encoder_flops(config, length_schedule(config.num_layers, n)).total

    params = ModelParams.init(config, MergeSpec.none(), seed=6)
    batch = PaddedBatch(np.array([[2, 3]]), np.array([[-1, 0]]), np.array([n]))
    with ad.count_matmul_flops() as counter:
        encode(batch, params)

    ok = layer == hand and analytic == sum(hand.values()) == counter.total
    _line(
        6,
        ok,
        f"qkv 192 + scores 32 + apply 32 + out 64 + ffnn 256 = {sum(hand.values())}; "
        f"analytic {analytic} == instrumented {counter.total}, exactly",
    )
    assert ok, (layer, analytic, counter.total)


@pytest.mark.xfail(
    strict=True,
    reason="a 640 hand total is not reachable under 2*m*k*p counting: "
    "qkv 192 + scores 32 + apply 32 + out 64 + ffnn 256 = 576",
)
def test_criterion_06_hand_total_of_640():
    total = count_encoder_flops(TINY_FLOPS_CONFIG, length_schedule(1, 2)).total
    _line(6, False, f"quoted hand total 640; the terms sum to {total}", expected_fail=True)
    assert total == 640, f"2*m*k*p terms sum to {total}, not 640"


# ---------------------------------------------------------------------------
# 7-8: cost model shape and the headline ratio


def test_criterion_07_flops_monotone_in_merge_position():
    config = ModelConfig(
        arch="classifier",
        num_layers=6,
        d_model=32,
        num_heads=4,
        d_ff=64,
        vocab_size=40,
        max_len=80,
        num_classes=3,
    )
    rng = np.random.default_rng(77)
    for _ in range(20):
        n = int(rng.integers(3, 65))
        n_merged = int(rng.integers(2, n))
        totals = [
            merged_encoder_flops(config, n, n_merged, pos).total for pos in range(7)
        ]
        baseline = count_encoder_flops(config, length_schedule(6, n)).total
        assert all(a <= b for a, b in zip(totals, totals[1:])), (n, n_merged, totals)
        assert totals[0] == min(totals) and totals[0] < baseline
        assert max(totals) <= baseline and totals[-1] == baseline
    _line(
        7,
        True,
        "20 random (N, N') pairs, 6 layers: non-decreasing in position, "
        "immediate merge minimal, no-merge maximal",
    )


def test_criterion_08_savings_ratio_reference_value():
    ratio = savings_ratio(15.92, 13.53)
    ok = abs(ratio - 1.18) <= 0.005
    _line(8, ok, f"savings_ratio(15.92, 13.53) = {ratio:.4f}, within 1.18 +/- 0.005")
    assert ok, ratio


# ---------------------------------------------------------------------------
# 9-10: frontier and knee against independent routines


def _brute_frontier(points):
    """Quadratic dominance filter with duplicate collapse, sorted by cost."""
    kept = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if j == i:
                continue
            no_worse = q.cost <= p.cost and q.performance >= p.performance
            better = q.cost < p.cost or q.performance > p.performance
            if no_worse and better:
                dominated = True
                break
        if not dominated and all(
            (k.cost, k.performance) != (p.cost, p.performance) for k in kept
        ):
            kept.append(p)
    return sorted(kept, key=lambda q: q.cost)


def test_criterion_09_frontier_matches_brute_force():
    rng = np.random.default_rng(99)
    for case in range(200):
        m = int(rng.integers(1, 101))
        if case % 3 == 0:  # coarse grid to force ties and duplicates
            costs = rng.integers(1, 9, size=m).astype(float)
            perfs = rng.integers(0, 8, size=m).astype(float)
        else:
            costs = rng.uniform(0.1, 100.0, size=m).round(2)
            perfs = rng.uniform(0.0, 1.0, size=m).round(3)
        pts = [
            ConfigPoint(f"p{i}", float(c), float(v))
            for i, (c, v) in enumerate(zip(costs, perfs))
        ]
        got = [(p.cost, p.performance) for p in efficiency_frontier(pts)]
        want = [(p.cost, p.performance) for p in _brute_frontier(pts)]
        assert got == want, (case, got, want)

    example = [
        ConfigPoint("merged", 13.53, 92.04),
        ConfigPoint("baseline", 15.92, 93.86),
    ]
    front = [(p.cost, p.performance) for p in efficiency_frontier(example)]
    ok = front == [(13.53, 92.04), (15.92, 93.86)]
    _line(
        9,
        ok,
        "200 random point sets match the quadratic filter exactly; "
        f"two-configuration example keeps both: {front}",
    )
    assert ok, front


def _chord_distance(front, p):
    """Residual after projecting p onto the endpoint chord (not the
    cross-product form the library uses)."""
    lo = min(front, key=lambda q: (q.cost, -q.performance))
    hi = max(front, key=lambda q: (q.performance, -q.cost))
    ax, ay = hi.cost - lo.cost, hi.performance - lo.performance
    aa = ax * ax + ay * ay
    if aa == 0.0:
        return 0.0
    bx, by = p.cost - lo.cost, p.performance - lo.performance
    t = (bx * ax + by * ay) / aa
    return math.hypot(bx - t * ax, by - t * ay)


def test_criterion_10_knee_matches_independent_geometry():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 40))
        pts = [
            ConfigPoint(f"p{i}", float(c), float(v))
            for i, (c, v) in enumerate(
                zip(rng.uniform(0.5, 50.0, size=m), rng.uniform(0.0, 1.0, size=m))
            )
        ]
        front = efficiency_frontier(pts)
        ref = [_chord_distance(front, p) for p in front]
        got = knee_distances(front)
        worst = max(worst, max(abs(a - b) for a, b in zip(ref, got)))
        pick = max(range(len(front)), key=lambda i: (ref[i], front[i].performance))
        assert knee_point(front) is front[pick]

    only = [ConfigPoint("only", 3.0, 0.5)]
    assert knee_point(only) is only[0]
    line = [ConfigPoint(f"c{i}", float(i + 1), 0.1 * (i + 1)) for i in range(4)]
    collinear = efficiency_frontier(line)
    assert len(collinear) == 4 and knee_point(collinear) is collinear[-1]

    ok = worst <= 1e-12
    _line(
        10,
        ok,
        f"100 frontiers: distances within {worst:.1e} of the cross-product form (1e-12); "
        "degenerate frontiers pick the max-performance point",
    )
    assert ok, worst


# ---------------------------------------------------------------------------
# 11-12: end-to-end training


CLASSIFY_MODEL = ModelConfig(
    arch="classifier",
    num_layers=2,
    d_model=64,
    num_heads=4,
    d_ff=128,
    vocab_size=160,
    max_len=192,
    num_classes=4,
)

TRANSLATE_MODEL = ModelConfig(
    arch="seq2seq",
    num_layers=1,
    d_model=48,
    num_heads=4,
    d_ff=96,
    vocab_size=140,
    max_len=120,
)


def _classify_experiment():
    return ExperimentConfig(
        task="classify",
        model=CLASSIFY_MODEL,
        dataset={"num_classes": 4, "per_class": 100, "seed": 13},
        epochs=10,
        batch_size=16,
        learning_rate=3e-4,
    )


def _translate_experiment():
    return ExperimentConfig(
        task="translate",
        model=TRANSLATE_MODEL,
        dataset={"pairs": 120, "seed": 7},
        epochs=3,
        batch_size=16,
        learning_rate=1e-3,
        max_decode_len=60,
    )


@pytest.fixture(scope="module")
def classify_setup():
    exp = _classify_experiment()
    return exp, prepare_task(exp)


def test_criterion_11_mean_merge_at_last_layer_learns(classify_setup):
    exp, data = classify_setup
    last = exp.model.num_layers
    scores, slowest = [], 0.0
    for seed in (0, 1, 2):
        t0 = time.perf_counter()
        res = train(exp, "mean", last, seed, data=data)
        slowest = max(slowest, time.perf_counter() - t0)
        scores.append(res.metric)
        assert res.status == "ok"

    below = eval_flops(exp.model, MergeSpec("mean", last - 1), data.test, "classify")
    baseline = eval_flops(exp.model, MergeSpec.none(), data.test, "classify")
    assert below < baseline  # merging below the top does cut evaluation work

    ok = all(s >= 0.9 for s in scores) and slowest < 300.0
    _line(
        11,
        ok,
        f"mean merge after layer {last}: test macro-F1 "
        + "/".join(f"{s:.3f}" for s in scores)
        + f" >= 0.9 on 3 seeds within 10 epochs, slowest run {slowest:.0f}s < 300s; "
        f"merge below the top layer cuts eval FLOPs ({below / baseline:.2f}x baseline)",
    )
    assert ok, (scores, slowest)


@pytest.mark.xfail(
    strict=True,
    reason="merging after the final encoder layer leaves every layer at full "
    "length, so evaluation FLOPs equal the baseline instead of beating it",
)
def test_criterion_11_strictly_fewer_eval_flops_at_final_position(classify_setup):
    exp, data = classify_setup
    last = exp.model.num_layers
    merged = eval_flops(exp.model, MergeSpec("mean", last), data.test, "classify")
    baseline = eval_flops(exp.model, MergeSpec.none(), data.test, "classify")
    _line(
        11,
        False,
        f"merge at position {last}: eval FLOPs {merged} == baseline {baseline}",
        expected_fail=True,
    )
    assert merged < baseline, f"position {last} reports {merged} vs baseline {baseline}"


def _check_sweep_dir(out_dir, exp):
    cells = {("none", "")} | {
        (s, str(p)) for s in exp.strategies for p in exp.positions
    }
    with open(out_dir / "results.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(cells) * len(exp.seeds)
    assert list(rows[0]) == ["strategy", "position", "seed", "metric", "flops"]
    seen = {(r["strategy"], r["position"]) for r in rows}
    assert seen == cells
    for r in rows:
        assert math.isfinite(float(r["metric"])), r
        assert int(r["flops"]) > 0

    with open(out_dir / "points.csv", newline="", encoding="utf-8") as fh:
        pts = list(csv.DictReader(fh))
    assert pts and list(pts[0]) == ["label", "cost", "performance"]

    report = json.loads((out_dir / "report.json").read_text(encoding="utf-8"))
    assert report["frontier"], "frontier must not be empty"
    labels = [p["label"] for p in report["frontier"]]
    assert report["knee"]["label"] in labels
    return len(rows), labels, report["knee"]["label"]


def test_criterion_12_sweeps_and_w0_equivalence(tmp_path, classify_setup):
    exp_cls, data_cls = classify_setup
    run_sweep(exp_cls, tmp_path / "classify")
    n_cls, _, knee_cls = _check_sweep_dir(tmp_path / "classify", exp_cls)

    exp_tr = _translate_experiment()
    run_sweep(exp_tr, tmp_path / "translate")
    n_tr, _, knee_tr = _check_sweep_dir(tmp_path / "translate", exp_tr)

    # learnable starts at w=0 and must be indistinguishable from mean before
    # the first optimizer step
    worst = 0.0
    for position in exp_cls.positions:
        pm = ModelParams.init(exp_cls.model, MergeSpec("mean", position), seed=21)
        pl = ModelParams.init(exp_cls.model, MergeSpec("learnable", position), seed=21)
        assert float(np.abs(pl["merge.w"].data).max()) == 0.0
        fm = evaluate(pm, data_cls.valid, "classify", data_cls.vocab)
        fl = evaluate(pl, data_cls.valid, "classify", data_cls.vocab)
        worst = max(worst, abs(fm - fl))

    data_tr = prepare_task(exp_tr)
    pm = ModelParams.init(exp_tr.model, MergeSpec("mean", 0), seed=21)
    pl = ModelParams.init(exp_tr.model, MergeSpec("learnable", 0), seed=21)
    fm = evaluate(pm, data_tr.valid, "translate", data_tr.vocab, max_decode_len=60)
    fl = evaluate(pl, data_tr.valid, "translate", data_tr.vocab, max_decode_len=60)
    worst = max(worst, abs(fm - fl))

    ok = worst <= 1e-6
    _line(
        12,
        ok,
        f"classify sweep {n_cls} runs (knee {knee_cls}), translate sweep {n_tr} runs "
        f"(knee {knee_tr}); both CSVs well formed, frontier and knee present; "
        f"learnable(w=0) vs mean first metrics differ by <= {worst:.1e} (1e-6)",
    )
    assert ok, worst


# ---------------------------------------------------------------------------
# 13: subtoken inflation on the identifier-heavy corpus


def test_criterion_13_identifier_corpus_inflation(tmp_path):
    corpus_path = tmp_path / "identifiers.jsonl"
    report_path = tmp_path / "inflation.json"
    assert (
        cli_main(
            [
                "gen-data",
                "--task",
                "translate",
                "--pairs",
                "120",
                "--seed",
                "7",
                "--out",
                str(corpus_path),
            ]
        )
        == 0
    )
    assert (
        cli_main(
            [
                "tokenize-stats",
                "--corpus",
                str(corpus_path),
                "--vocab-size",
                "120",
                "--out",
                str(report_path),
            ]
        )
        == 0
    )
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert len(report["pairs"]) == 120
    ok = report["mean_ratio"] > 1.0 and report["slope"] > 1.0
    _line(
        13,
        ok,
        f"mean subtokens per lexeme {report['mean_ratio']:.3f} > 1.0, "
        f"length regression slope {report['slope']:.3f} > 1.0, report written as JSON",
    )
    assert ok, report
