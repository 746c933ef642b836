"""Compare kernel backends: compiled vs numpy vs naive Python loops.

Runs the grouping scan and the segmented reductions across a few batch
shapes and prints a timing table. The naive loop route matches the test
oracles and exists only to show what the vectorization buys.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from submerge import kernels
from submerge.grouping import WordIdBatch, group_subwords_naive


def make_batch(rng, b, n, d):
    starts = rng.random((b, n)) < 0.4  # subtoken runs of ~2.5 on average
    starts[:, 0] = True
    word_rows = np.cumsum(starts, axis=1, dtype=np.int64) - 1
    values = rng.normal(size=(b, n, d))
    segments = kernels.group_ids(word_rows)
    num_segments = int(segments.max()) + 1
    return word_rows, values, segments, num_segments


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def naive_segment_sum(values, segments, num_segments):
    b, n, d = values.shape
    out = np.zeros((b, num_segments, d))
    for i in range(b):
        for j in range(n):
            out[i, segments[i, j]] += values[i, j]
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"available backends: {', '.join(backends)} (active: {kernels.backend_name()})")
    header = f"{'shape':>18} {'op':>12}" + "".join(f"{name:>12}" for name in backends)
    print(header + f"{'python':>12}")
    for b, n, d in ((8, 64, 32), (32, 128, 64), (64, 256, 64)):
        word_rows, values, segments, num_segments = make_batch(rng, b, n, d)
        shape = f"{b}x{n}x{d}"
        row = f"{shape:>18} {'group_ids':>12}"
        for impl in backends.values():
            dt = time_call(lambda: kernels.group_ids(word_rows, impl=impl), args.repeats)
            row += f"{dt * 1e3:>10.3f}ms"
        dt = time_call(
            lambda: group_subwords_naive(WordIdBatch(word_rows)), args.repeats
        )
        print(row + f"{dt * 1e3:>10.3f}ms")
        row = f"{shape:>18} {'segment_sum':>12}"
        for impl in backends.values():
            dt = time_call(
                lambda: kernels.segment_sum(values, segments, num_segments, impl=impl),
                args.repeats,
            )
            row += f"{dt * 1e3:>10.3f}ms"
        dt = time_call(
            lambda: naive_segment_sum(values, segments, num_segments), args.repeats
        )
        print(row + f"{dt * 1e3:>10.3f}ms")


if __name__ == "__main__":
    main()
