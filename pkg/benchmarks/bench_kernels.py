#!/usr/bin/env python3
"""Time each hot kernel on its numba and pure-numpy paths.

Run after an editable install:

    python3 benchmarks/bench_kernels.py [--repeats 5]

The numba path is what ships by default; set PATCHFORGE_DISABLE_NUMBA=1 to
make the package itself fall back to the numpy variants measured here.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from patchforge import _kernels as K


def timeit(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not K.NUMBA_ENABLED:
        raise SystemExit("numba path is disabled; unset PATCHFORGE_DISABLE_NUMBA to benchmark both")

    rng = np.random.default_rng(0)
    K.warmup()

    mask = rng.random((4096, 4096)) > 0.5              # 256x256 grid of 16px patches
    queries = rng.integers(0, 256, (4096, 2))
    pool = np.unique(rng.integers(0, 256, (2048, 2)), axis=0)
    pts = np.unique(rng.integers(0, 256, (4096, 2)), axis=0)
    region = rng.integers(0, 256, (2048, 2))
    offsets = np.array(
        [(di, dj) for di in range(-3, 4) for dj in range(-3, 4) if 1 <= abs(di) + abs(dj) <= 3],
        dtype=np.int64,
    )
    valid = rng.random((256, 256)) > 0.5
    poly_x = rng.uniform(0, 512, 24)
    poly_y = rng.uniform(0, 512, 24)
    text_a = rng.integers(0, 50, 2000)
    text_b = rng.integers(0, 50, 2000)

    cases = [
        ("patch_fg_counts (4096^2 px)",
         (K.patch_fg_counts, K.patch_fg_counts_numpy), (mask, 256, 256, 16)),
        ("nearest_l1 (4096 x 2048)",
         (K.nearest_l1, K.nearest_l1_numpy), (queries, pool)),
        ("fps_select (k=64)",
         (K.fps_select, K.fps_select_numpy), (pts, 64, 0)),
        ("offset_hit_counts (2048 x 24)",
         (K.offset_hit_counts, K.offset_hit_counts_numpy), (region, offsets, valid)),
        ("polygon_even_odd (512^2 px, 24 verts)",
         (K.polygon_even_odd, K.polygon_even_odd_numpy), (poly_x, poly_y, 512, 512)),
        ("lcs_length (2000 x 2000 tokens)",
         (K.lcs_length, K.lcs_length_numpy), (text_a, text_b)),
    ]

    print(f"{'kernel':<40} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name, (jit_fn, np_fn), call_args in cases:
        jit_out = jit_fn(*call_args)
        np_out = np_fn(*call_args)
        assert np.array_equal(jit_out, np_out), f"path mismatch in {name}"
        t_jit = timeit(jit_fn, *call_args, repeats=args.repeats)
        t_np = timeit(np_fn, *call_args, repeats=args.repeats)
        print(f"{name:<40} {t_jit * 1e3:>8.2f}ms {t_np * 1e3:>8.2f}ms {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
