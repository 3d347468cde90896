"""Benchmark the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_nn.py [--repeats 5]

Times the nearest-neighbor cosine search (the evaluation hot path) and the
convolution forward pass at several realistic sizes, and verifies on every
case that both backends return bit-identical results.
"""

import argparse
import time

import numpy as np

from descalign import backend

NN_CASES = [
    # (queries, pool, dim)   pool = shots * cells after selection
    (75 * 12, 12, 8),        # 5-way 1-shot episode, one pool, heavy selection
    (75 * 36, 36, 8),        # 1-shot, selection off
    (50 * 36, 5 * 36, 8),    # 5-shot episode
    (50 * 36, 5 * 36, 64),   # wider descriptors
    (2000, 441, 64),         # 21x21 grid pool
]

CONV_CASES = [
    # (cin, cout, k, h, w)
    (8, 8, 3, 6, 6),
    (64, 64, 3, 10, 10),
    (64, 64, 3, 21, 21),
]


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_nn(repeats):
    print(f"{'queries':>8} {'pool':>6} {'dim':>4} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n, l, d in NN_CASES:
        q = rng.standard_normal((n, d))
        p = rng.standard_normal((l, d))
        np_k = backend.kernels("numpy")
        nb_k = backend.kernels("numba")
        nb_k.nn_best(q, p)  # warm the JIT outside the timer
        ref = np_k.nn_best(q, p)
        fast = nb_k.nn_best(q, p)
        assert np.array_equal(ref[0], fast[0]) and np.array_equal(ref[1], fast[1])
        t_np = best_of(lambda: np_k.nn_best(q, p), repeats)
        t_nb = best_of(lambda: nb_k.nn_best(q, p), repeats)
        print(f"{n:>8} {l:>6} {d:>4} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x")


def bench_conv(repeats):
    print(f"\n{'conv':>22} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for cin, cout, k, h, w in CONV_CASES:
        x = rng.standard_normal((cin, h, w))
        wt = rng.standard_normal((cout, cin, k, k))
        b = rng.standard_normal(cout)
        pad = 1 if k == 3 else 0
        np_k = backend.kernels("numpy")
        nb_k = backend.kernels("numba")
        nb_k.conv2d(x, wt, b, pad)
        assert np.array_equal(np_k.conv2d(x, wt, b, pad), nb_k.conv2d(x, wt, b, pad))
        t_np = best_of(lambda: np_k.conv2d(x, wt, b, pad), repeats)
        t_nb = best_of(lambda: nb_k.conv2d(x, wt, b, pad), repeats)
        label = f"{cin}->{cout} {k}x{k} @{h}x{w}"
        print(f"{label:>22} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if not backend.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    bench_nn(args.repeats)
    bench_conv(args.repeats)


if __name__ == "__main__":
    main()
