"""Benchmark the compiled patch-op kernels against the numpy fallback.

Runs im2col and its adjoint col2im on convolution shapes representative of
the bundled models (28x28x1 and 32x32x3 stacks at training batch size),
checks that both backends produce bit-identical output, and reports
best-of-N wall times.

Usage:
    python3 benchmarks/bench_kernels.py [--batch 64] [--repeats 5]
"""

import argparse
import sys
import time

import numpy as np

from maskedvae.kernels import reference

try:
    from maskedvae.kernels import _patchops as compiled
except ImportError:
    compiled = None


# (label, padded h, padded w, channels, kernel, stride)
CASES = (
    ("enc conv1 28x28", 32, 32, 1, 5, 2),
    ("enc conv2 28x28", 17, 17, 20, 5, 2),
    ("dec conv 28x28", 32, 32, 21, 5, 1),
    ("enc conv1 32x32", 36, 36, 3, 5, 2),
    ("dec conv 32x32", 36, 36, 33, 5, 1),
    ("wide stride-3", 31, 31, 16, 4, 3),
)


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def out_dim(size, k, stride):
    return (size - k) // stride + 1


def bench_case(label, h, w, c, k, stride, batch, repeats, dtype, gen):
    xp = gen.standard_normal((batch, h, w, c)).astype(dtype)
    oh, ow = out_dim(h, k, stride), out_dim(w, k, stride)
    cols = gen.standard_normal((batch, oh, ow, k * k * c)).astype(dtype)

    rows = []
    for op, ref_fn, fast_fn in (
        ("im2col", lambda: reference.im2col(xp, k, stride),
         (lambda: compiled.im2col(xp, k, stride)) if compiled else None),
        ("col2im", lambda: reference.col2im(cols, h, w, c, k, stride),
         (lambda: compiled.col2im(cols, h, w, c, k, stride)) if compiled else None),
    ):
        ref_out = ref_fn()
        ref_ms = best_time(ref_fn, repeats) * 1e3
        if fast_fn is None:
            rows.append((label, op, ref_ms, None, None, None))
            continue
        fast_out = fast_fn()
        identical = ref_out.shape == fast_out.shape and np.array_equal(
            ref_out, fast_out
        )
        fast_ms = best_time(fast_fn, repeats) * 1e3
        rows.append((label, op, ref_ms, fast_ms, ref_ms / fast_ms, identical))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=64, help="batch size")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats, best is kept")
    parser.add_argument("--dtype", choices=("float32", "float64"),
                        default="float32")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if compiled is None:
        print("compiled extension not importable; timing numpy fallback only",
              file=sys.stderr)

    gen = np.random.default_rng(args.seed)
    dtype = np.dtype(args.dtype)
    header = (f"{'case':<18} {'op':<7} {'numpy ms':>9} {'compiled ms':>12} "
              f"{'speedup':>8} {'identical':>9}")
    print(f"batch={args.batch} dtype={dtype.name} repeats={args.repeats}")
    print(header)
    print("-" * len(header))

    mismatches = 0
    for case in CASES:
        rows = bench_case(*case, args.batch, args.repeats, dtype, gen)
        for label, op, ref_ms, fast_ms, speedup, identical in rows:
            if fast_ms is None:
                print(f"{label:<18} {op:<7} {ref_ms:>9.2f} {'-':>12} "
                      f"{'-':>8} {'-':>9}")
                continue
            if not identical:
                mismatches += 1
            print(f"{label:<18} {op:<7} {ref_ms:>9.2f} {fast_ms:>12.2f} "
                  f"{speedup:>7.1f}x {str(identical):>9}")

    if mismatches:
        print(f"error: {mismatches} op(s) disagree between backends",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
