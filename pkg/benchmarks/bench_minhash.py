#!/usr/bin/env python3
"""Benchmark the compiled MinHash signature kernel against the numpy fallback.

The signature loop (num_perm minima over every shingle hash) dominates
dedup runtime on real corpora, which is why it gets the Cython treatment.
Run after an editable install:

    python benchmarks/bench_minhash.py [--num-perm 256] [--docs 200]
"""
import argparse
import time

import numpy as np

from babelkit.dedup_graph import (
    MinHashParams,
    permutation_keys,
    signature_kernel_numpy,
)

try:
    from babelkit._minhash import signature_kernel as signature_kernel_ext
except ImportError:
    signature_kernel_ext = None


def bench(fn, hash_arrays, keys, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for hashes in hash_arrays:
            fn(hashes, keys)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--num-perm", type=int, default=256)
    parser.add_argument("--docs", type=int, default=200)
    parser.add_argument("--min-shingles", type=int, default=100)
    parser.add_argument("--max-shingles", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    params = MinHashParams(num_perm=args.num_perm, bands=args.num_perm // 8, rows=8)
    keys = permutation_keys(params)
    hash_arrays = [
        rng.integers(0, 2**64, size=int(rng.integers(args.min_shingles, args.max_shingles)),
                     dtype=np.uint64)
        for _ in range(args.docs)
    ]
    total_shingles = sum(len(h) for h in hash_arrays)
    print(f"{args.docs} docs, {total_shingles} shingle hashes, {args.num_perm} permutations")

    t_numpy = bench(signature_kernel_numpy, hash_arrays, keys)
    rate = total_shingles * args.num_perm / t_numpy / 1e6
    print(f"numpy fallback : {t_numpy:8.3f} s  ({rate:8.1f} M hash-evals/s)")

    if signature_kernel_ext is None:
        print("compiled kernel: not built (pip install -e . --no-build-isolation)")
        return

    t_ext = bench(signature_kernel_ext, hash_arrays, keys)
    rate = total_shingles * args.num_perm / t_ext / 1e6
    print(f"compiled kernel: {t_ext:8.3f} s  ({rate:8.1f} M hash-evals/s)")
    print(f"speedup        : {t_numpy / t_ext:8.2f}x")

    for hashes in hash_arrays[:10]:
        a = signature_kernel_numpy(hashes, keys)
        b = np.asarray(signature_kernel_ext(hashes, keys))
        assert np.array_equal(a, b), "kernel outputs diverge"
    print("outputs bit-identical on sampled docs")


if __name__ == "__main__":
    main()
