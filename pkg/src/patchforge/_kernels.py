"""Hot numeric kernels with paired numba and pure-numpy implementations.

Each kernel exists twice: a loop form that numba JIT-compiles, and a
vectorized numpy form. Both compute bit-identical results (integer
arithmetic throughout, or elementwise-identical float ops), so the choice
is purely a speed knob. Selection:

* numba path when numba imports cleanly (the default),
* numpy path when ``PATCHFORGE_DISABLE_NUMBA=1`` is set or numba is absent.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_LARGE = np.int64(1) << 60


def _env_disabled() -> bool:
    return os.environ.get("PATCHFORGE_DISABLE_NUMBA", "").strip().lower() in (
        "1",
        "true",
        "yes",
    )


try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------------------
# loop implementations (numba-compilable, also runnable as plain python)


def _patch_fg_counts_loop(mask: np.ndarray, h_p: int, w_p: int, patch_px: int) -> np.ndarray:
    counts = np.zeros((h_p, w_p), dtype=np.int64)
    for y in range(h_p * patch_px):
        for x in range(w_p * patch_px):
            if mask[y, x]:
                counts[y // patch_px, x // patch_px] += 1
    return counts


def _nearest_l1_loop(queries: np.ndarray, pool: np.ndarray) -> np.ndarray:
    out = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        best = 0
        best_d = _LARGE
        for j in range(pool.shape[0]):
            d = abs(queries[i, 0] - pool[j, 0]) + abs(queries[i, 1] - pool[j, 1])
            if d < best_d:
                best_d = d
                best = j
        out[i] = best
    return out


def _fps_select_loop(pts: np.ndarray, k: int, start: int) -> np.ndarray:
    n = pts.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    min_d = np.empty(n, dtype=np.int64)
    for i in range(n):
        min_d[i] = abs(pts[i, 0] - pts[start, 0]) + abs(pts[i, 1] - pts[start, 1])
    for m in range(1, k):
        best = 0
        best_d = np.int64(-1)
        for i in range(n):
            if min_d[i] > best_d:
                best_d = min_d[i]
                best = i
        chosen[m] = best
        for i in range(n):
            d = abs(pts[i, 0] - pts[best, 0]) + abs(pts[i, 1] - pts[best, 1])
            if d < min_d[i]:
                min_d[i] = d
    return chosen


def _offset_hit_counts_loop(region: np.ndarray, offsets: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = valid.shape
    counts = np.zeros(offsets.shape[0], dtype=np.int64)
    for m in range(offsets.shape[0]):
        di = offsets[m, 0]
        dj = offsets[m, 1]
        c = 0
        for i in range(region.shape[0]):
            ri = region[i, 0] + di
            rj = region[i, 1] + dj
            if ri >= 0 and ri < h and rj >= 0 and rj < w and valid[ri, rj]:
                c += 1
        counts[m] = c
    return counts


def _polygon_even_odd_loop(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=np.bool_)
    n = xs.shape[0]
    for row in range(height):
        py = row + 0.5
        for col in range(width):
            px = col + 0.5
            inside = False
            j = n - 1
            for i in range(n):
                yi = ys[i]
                yj = ys[j]
                if (yi > py) != (yj > py):
                    x_cross = (xs[j] - xs[i]) * (py - yi) / (yj - yi) + xs[i]
                    if px < x_cross:
                        inside = not inside
                j = i
            out[row, col] = inside
    return out


def _lcs_length_loop(a: np.ndarray, b: np.ndarray) -> int:
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(a.shape[0]):
        for j in range(1, m + 1):
            if a[i] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        prev, cur = cur, prev
    return int(prev[m])


# ---------------------------------------------------------------------------
# numpy implementations


def patch_fg_counts_numpy(mask: np.ndarray, h_p: int, w_p: int, patch_px: int) -> np.ndarray:
    blocks = mask.astype(np.int64).reshape(h_p, patch_px, w_p, patch_px)
    return blocks.sum(axis=(1, 3))


def nearest_l1_numpy(queries: np.ndarray, pool: np.ndarray) -> np.ndarray:
    out = np.empty(queries.shape[0], dtype=np.int64)
    # blockwise to bound the (n, m) distance matrix
    step = max(1, (1 << 22) // max(1, pool.shape[0]))
    for lo in range(0, queries.shape[0], step):
        q = queries[lo : lo + step]
        d = np.abs(q[:, None, 0] - pool[None, :, 0]) + np.abs(q[:, None, 1] - pool[None, :, 1])
        out[lo : lo + step] = d.argmin(axis=1)
    return out


def fps_select_numpy(pts: np.ndarray, k: int, start: int) -> np.ndarray:
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    min_d = np.abs(pts[:, 0] - pts[start, 0]) + np.abs(pts[:, 1] - pts[start, 1])
    for m in range(1, k):
        best = int(np.argmax(min_d))
        chosen[m] = best
        d = np.abs(pts[:, 0] - pts[best, 0]) + np.abs(pts[:, 1] - pts[best, 1])
        np.minimum(min_d, d, out=min_d)
    return chosen


def offset_hit_counts_numpy(region: np.ndarray, offsets: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = valid.shape
    ri = region[:, None, 0] + offsets[None, :, 0]
    rj = region[:, None, 1] + offsets[None, :, 1]
    in_grid = (ri >= 0) & (ri < h) & (rj >= 0) & (rj < w)
    hits = np.zeros_like(in_grid, dtype=np.bool_)
    hits[in_grid] = valid[ri[in_grid], rj[in_grid]]
    return hits.sum(axis=0).astype(np.int64)


def polygon_even_odd_numpy(xs: np.ndarray, ys: np.ndarray, height: int, width: int) -> np.ndarray:
    py = np.arange(height, dtype=np.float64)[:, None] + 0.5
    px = np.arange(width, dtype=np.float64)[None, :] + 0.5
    inside = np.zeros((height, width), dtype=np.bool_)
    n = xs.shape[0]
    j = n - 1
    for i in range(n):
        yi, yj = ys[i], ys[j]
        straddles = (yi > py) != (yj > py)
        if yi != yj:
            x_cross = (xs[j] - xs[i]) * (py - yi) / (yj - yi) + xs[i]
            inside ^= straddles & (px < x_cross)
        j = i
    return inside


def lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    for token in a:
        # row update: max(up, diag + match) then prefix-max folds in the left cell
        tmp = np.maximum(prev[1:], prev[:-1] + (b == token))
        prev = np.maximum.accumulate(np.concatenate(([0], tmp)))
    return int(prev[m])


# ---------------------------------------------------------------------------
# dispatch

if NUMBA_ENABLED:
    patch_fg_counts = njit(cache=True)(_patch_fg_counts_loop)
    nearest_l1 = njit(cache=True)(_nearest_l1_loop)
    fps_select = njit(cache=True)(_fps_select_loop)
    offset_hit_counts = njit(cache=True)(_offset_hit_counts_loop)
    polygon_even_odd = njit(cache=True)(_polygon_even_odd_loop)
    lcs_length = njit(cache=True)(_lcs_length_loop)
else:
    patch_fg_counts = patch_fg_counts_numpy
    nearest_l1 = nearest_l1_numpy
    fps_select = fps_select_numpy
    offset_hit_counts = offset_hit_counts_numpy
    polygon_even_odd = polygon_even_odd_numpy
    lcs_length = lcs_length_numpy


def warmup() -> None:
    """Force JIT compilation of every kernel (no-op on the numpy path)."""
    mask = np.zeros((2, 2), dtype=np.bool_)
    pts = np.array([[0, 0], [1, 1]], dtype=np.int64)
    patch_fg_counts(mask, 1, 1, 2)
    nearest_l1(pts, pts)
    fps_select(pts, 2, 0)
    offset_hit_counts(pts, pts, mask)
    polygon_even_odd(np.array([0.0, 2.0, 0.0]), np.array([0.0, 0.0, 2.0]), 2, 2)
    lcs_length(np.array([1, 2], dtype=np.int64), np.array([2, 1], dtype=np.int64))
