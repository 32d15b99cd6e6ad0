"""The four artifact-injection tools: add, remove, distort, fuse.

Each tool turns a grounded region into a target-reference patch mapping.
All tie-breaks (best ring cell, nearest pool patch, seed selection, best
offset) are lexicographic or by the documented key, so identical inputs and
seeds give byte-identical mappings on every platform.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._kernels import fps_select, nearest_l1, offset_hit_counts
from .errors import (
    EmptyPatchSetError,
    InvalidCoordinateError,
    NoCandidateError,
    NoReferenceError,
)
from .grid import Coord, PatchGrid, PatchMapping, PatchSet, Tool, coords_to_array, from_linear, to_linear

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AddParams:
    alpha: int = 4
    lambda_dist: float = 0.1

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.lambda_dist < 0:
            raise ValueError("lambda_dist must be >= 0")


@dataclass(frozen=True)
class RemoveParams:
    radius: int = 2

    def __post_init__(self) -> None:
        if self.radius < 1:
            raise ValueError("radius must be >= 1")


DISTORT_KERNELS = ("shuffle", "jitter", "strip")


@dataclass(frozen=True)
class DistortParams:
    kernel: str = "shuffle"
    sigma: float = 1.5
    strips: int = 3
    max_attempts: int = 16

    def __post_init__(self) -> None:
        if self.kernel not in DISTORT_KERNELS:
            raise ValueError(f"unknown distort kernel {self.kernel!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.strips < 1:
            raise ValueError("strips must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class FuseParams:
    band_radius: int = 1
    max_offset: int = 3
    seeds: int = 4
    reversed_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.band_radius < 1 or self.max_offset < 1 or self.seeds < 1:
            raise ValueError("band_radius, max_offset and seeds must be >= 1")
        if not 0.0 <= self.reversed_fraction <= 1.0:
            raise ValueError("reversed_fraction must be in [0, 1]")


# ---------------------------------------------------------------------------
# shared helpers


def _round_half_away(x: float) -> int:
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(-x + 0.5))


def centroid(refs: PatchSet) -> Coord:
    """Componentwise mean of a patch set, rounded half away from zero."""
    if not refs:
        raise EmptyPatchSetError("centroid of an empty patch set is undefined")
    n = len(refs)
    sum_r = sum(r for r, _ in refs)
    sum_c = sum(c for _, c in refs)
    return (_round_half_away(sum_r / n), _round_half_away(sum_c / n))


def perimeter_band(center: Coord, alpha: int, grid: PatchGrid) -> PatchSet:
    """All in-grid cells at L1 distance in [1, alpha] from ``center``."""
    ci, cj = center
    band = set()
    for di in range(-alpha, alpha + 1):
        rest = alpha - abs(di)
        for dj in range(-rest, rest + 1):
            if di == 0 and dj == 0:
                continue
            cell = (ci + di, cj + dj)
            if grid.contains(cell):
                band.add(cell)
    return frozenset(band)


def local_neighborhood(targets: PatchSet, radius: int, grid: PatchGrid) -> PatchSet:
    """In-grid patches within L1 distance ``radius`` of any target, targets excluded."""
    if not targets:
        raise EmptyPatchSetError("neighborhood of an empty target set is undefined")
    nbr = set()
    for ti, tj in targets:
        for di in range(-radius, radius + 1):
            rest = radius - abs(di)
            for dj in range(-rest, rest + 1):
                cell = (ti + di, tj + dj)
                if grid.contains(cell) and cell not in targets:
                    nbr.add(cell)
    return frozenset(nbr)


def _nearest_refs(queries: Sequence[Coord], pool: PatchSet) -> list[Coord]:
    """L1-nearest pool patch per query; ties to the lexicographically smallest."""
    pool_arr = coords_to_array(pool)
    idx = nearest_l1(coords_to_array_ordered(queries), pool_arr)
    return [(int(pool_arr[i, 0]), int(pool_arr[i, 1])) for i in idx]


def coords_to_array_ordered(coords: Sequence[Coord]) -> np.ndarray:
    """(n, 2) int64 array preserving the given order."""
    return np.array(list(coords), dtype=np.int64).reshape(-1, 2)


def _require_in_grid(coords: Iterable[Coord], grid: PatchGrid, what: str) -> None:
    for c in coords:
        if not grid.contains(c):
            raise InvalidCoordinateError(f"{what} {c} outside {grid.h_p}x{grid.w_p} grid")


# ---------------------------------------------------------------------------
# add tool (duplication)


def add_tool(refs: PatchSet, ent: PatchSet, sub: PatchSet, params: AddParams,
             grid: PatchGrid) -> PatchMapping:
    """Duplicate a subentity next to itself.

    Candidate centroids on the perimeter band are scored by
    ``(3 - r_self - r_ent - r_sub) / (1 + lambda_dist * d_L1)`` where the
    ratios measure how much the shifted copy re-covers the original
    subentity, the rest of its entity, and same-part patches of other
    instances. Overlap denominators count the full shifted set before any
    clipping; shifted targets that land off-grid are dropped from the
    mapping afterwards.
    """
    if not refs:
        raise EmptyPatchSetError("add tool needs a non-empty reference set")
    _require_in_grid(refs, grid, "reference")
    center = centroid(refs)
    ring = perimeter_band(center, params.alpha, grid)
    if not ring:
        raise NoCandidateError("perimeter band is empty after clipping")

    n_shift = len(refs)
    ent_minus_refs = ent - refs
    best_cell = None
    best_score = -math.inf
    for cell in sorted(ring):
        di, dj = cell[0] - center[0], cell[1] - center[1]
        shifted = {(r + di, c + dj) for r, c in refs}
        r_self = len(shifted & refs) / n_shift
        r_ent = len(shifted & ent_minus_refs) / n_shift
        r_sub = len(shifted & sub) / n_shift
        g_dist = 1.0 / (1.0 + params.lambda_dist * (abs(di) + abs(dj)))
        score = (3.0 - r_self - r_ent - r_sub) * g_dist
        if score > best_score:
            best_score = score
            best_cell = cell

    di, dj = best_cell[0] - center[0], best_cell[1] - center[1]
    pairs = []
    for r, c in sorted(refs):
        target = (r + di, c + dj)
        if grid.contains(target):
            pairs.append((target, (r, c)))
    return PatchMapping(tuple(pairs), Tool.ADD, grid)


# ---------------------------------------------------------------------------
# remove tool (omission)


def remove_tool(targets: PatchSet, ent: PatchSet, sub: PatchSet, params: RemoveParams,
                grid: PatchGrid) -> PatchMapping:
    """Erase a subentity by mapping each of its patches to nearby context.

    When the neighborhood holds enough non-entity background the pool is
    that background; otherwise it falls back to non-subentity neighbors.
    Same-part patches of other instances are never used as references.
    """
    if not targets:
        raise EmptyPatchSetError("remove tool needs a non-empty target set")
    _require_in_grid(targets, grid, "target")
    nbr = local_neighborhood(targets, params.radius, grid)
    no_sub = nbr - sub
    non_ent = nbr - ent
    if len(non_ent) > 0.5 * len(no_sub):
        pool = non_ent - sub
    else:
        pool = no_sub
    if not pool:
        raise NoReferenceError("reference pool is empty")
    ordered = sorted(targets)
    refs = _nearest_refs(ordered, pool)
    return PatchMapping(tuple(zip(ordered, refs)), Tool.REMOVE, grid)


# ---------------------------------------------------------------------------
# distort tool (distortion)


def shuffle_kernel(targets: Sequence[Coord], rng: np.random.Generator) -> list[Coord]:
    """References are a seeded permutation of the targets."""
    perm = rng.permutation(len(targets))
    return [targets[i] for i in perm]


def jitter_kernel(targets: Sequence[Coord], sigma: float, grid: PatchGrid,
                  ent: PatchSet, max_attempts: int, rng: np.random.Generator) -> list[Coord]:
    """Per-target Gaussian displacement, accepted when it lands on the
    entity foreground (anywhere in-grid when ``ent`` is empty). Sampled
    coordinates are rounded then projected onto the grid. After
    ``max_attempts`` rejections: nearest entity patch, or self if none."""
    refs: list[Coord] = []
    for py, px in targets:
        chosen: Coord | None = None
        for _ in range(max_attempts):
            dy, dx = rng.normal(0.0, sigma, 2)
            ny = min(max(_round_half_away(py + dy), 0), grid.h_p - 1)
            nx = min(max(_round_half_away(px + dx), 0), grid.w_p - 1)
            if not ent or (ny, nx) in ent:
                chosen = (ny, nx)
                break
        if chosen is None:
            chosen = _nearest_refs([(py, px)], ent)[0] if ent else (py, px)
        refs.append(chosen)
    return refs


def strip_kernel(targets: Sequence[Coord], strips: int) -> list[Coord]:
    """Partition targets into strips along the dominant direction and
    circularly shift each strip; shift of strip s is ``(-1)**(s+1) * s``."""
    if not targets:
        raise EmptyPatchSetError("strip kernel needs a non-empty target set")
    rows = [r for r, _ in targets]
    cols = [c for _, c in targets]
    height = max(rows) - min(rows) + 1
    width = max(cols) - min(cols) + 1
    vertical = height >= width
    key = (lambda rc: (rc[0], rc[1])) if vertical else (lambda rc: (rc[1], rc[0]))
    ordered = sorted(targets, key=key)

    ref_of: dict[Coord, Coord] = {}
    for s, chunk in enumerate(_near_equal_chunks(ordered, strips), start=1):
        if not chunk:
            continue
        delta = s if s % 2 == 1 else -s
        n_s = len(chunk)
        for u, patch in enumerate(chunk):
            ref_of[patch] = chunk[(u + delta) % n_s]
    return [ref_of[t] for t in targets]


def _near_equal_chunks(items: list, n: int) -> list[list]:
    """Split into n chunks of near-equal size; earlier chunks take the remainder."""
    q, r = divmod(len(items), n)
    chunks = []
    pos = 0
    for i in range(n):
        size = q + (1 if i < r else 0)
        chunks.append(items[pos : pos + size])
        pos += size
    return chunks


def distort_tool(targets: PatchSet, ent: PatchSet, params: DistortParams,
                 grid: PatchGrid, rng: np.random.Generator) -> PatchMapping:
    """One-to-one mapping from the subentity onto kernel-displaced references."""
    if not targets:
        raise EmptyPatchSetError("distort tool needs a non-empty target set")
    _require_in_grid(targets, grid, "target")
    ordered = sorted(targets)
    if params.kernel == "shuffle":
        refs = shuffle_kernel(ordered, rng)
    elif params.kernel == "jitter":
        refs = jitter_kernel(ordered, params.sigma, grid, ent, params.max_attempts, rng)
    else:
        refs = strip_kernel(ordered, params.strips)
    return PatchMapping(tuple(zip(ordered, refs)), Tool.DISTORT, grid)


# ---------------------------------------------------------------------------
# fuse tool (fusion)


def overlap_fusion_band(overlap: PatchSet, fg: PatchSet, band_radius: int,
                        grid: PatchGrid) -> PatchSet:
    """Foreground patches within L1 ``band_radius`` of the overlap region."""
    band = set()
    for oi, oj in overlap:
        for di in range(-band_radius, band_radius + 1):
            rest = band_radius - abs(di)
            for dj in range(-rest, rest + 1):
                cell = (oi + di, oj + dj)
                if grid.contains(cell) and cell in fg:
                    band.add(cell)
    return frozenset(band)


def farthest_point_sampling(pts: PatchSet, k: int) -> list[Coord]:
    """Greedy max-min seed selection.

    The first seed is the point L1-closest to the set centroid; each later
    seed maximizes its minimum distance to the chosen ones. All ties are
    lexicographic. k is capped at the point count.
    """
    if not pts or k <= 0:
        return []
    arr = coords_to_array(pts)
    n = arr.shape[0]
    k = min(k, n)
    # distances to the exact (unrounded) centroid, scaled by n to stay integer
    d0 = np.abs(arr[:, 0] * n - arr[:, 0].sum()) + np.abs(arr[:, 1] * n - arr[:, 1].sum())
    start = int(np.argmin(d0))
    idx = fps_select(arr, k, start)
    return [(int(arr[i, 0]), int(arr[i, 1])) for i in idx]


def opposite_region(seed: Coord, a_only: PatchSet, b_only: PatchSet, fg: PatchSet,
                    band: PatchSet) -> PatchSet:
    """Pool on the far side of the seed; ``fg - band`` when sides tie or are empty."""
    d_a = _min_l1(seed, a_only)
    d_b = _min_l1(seed, b_only)
    if d_a < d_b:
        return b_only
    if d_b < d_a:
        return a_only
    return fg - band


def _min_l1(p: Coord, pts: PatchSet) -> float:
    if not pts:
        return math.inf
    return min(abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in pts)


def offsets_within(max_offset: int) -> list[Coord]:
    """All offsets with 1 <= |di|+|dj| <= max_offset, ordered by (L1, di, dj)."""
    offs = [
        (di, dj)
        for di in range(-max_offset, max_offset + 1)
        for dj in range(-max_offset, max_offset + 1)
        if 1 <= abs(di) + abs(dj) <= max_offset
    ]
    offs.sort(key=lambda o: (abs(o[0]) + abs(o[1]), o[0], o[1]))
    return offs


def best_offset(region: PatchSet, opp: PatchSet, max_offset: int, grid: PatchGrid,
                band: PatchSet) -> Coord | None:
    """Offset mapping the most region patches onto in-grid, non-band opposite
    patches; None when no offset lands a single one. Ties prefer the smallest
    (|di|+|dj|, di, dj)."""
    if not region or not opp:
        return None
    omega = offsets_within(max_offset)
    valid = np.zeros((grid.h_p, grid.w_p), dtype=np.bool_)
    for r, c in opp - band:
        valid[r, c] = True
    counts = offset_hit_counts(
        coords_to_array(region), np.array(omega, dtype=np.int64), valid
    )
    best = int(np.argmax(counts))
    if counts[best] == 0:
        return None
    return omega[best]


def offset_or_nearest(p: Coord, offset: Coord | None, opp: PatchSet, grid: PatchGrid,
                      band: PatchSet) -> Coord:
    """Shifted patch when the shift is valid, else the L1-nearest opposite patch."""
    if not opp:
        raise NoReferenceError("opposite pool is empty")
    if offset is not None:
        q = (p[0] + offset[0], p[1] + offset[1])
        if grid.contains(q) and q in opp and q not in band:
            return q
    return _nearest_refs([p], opp)[0]


def fuse_tool(ent_a: PatchSet, ent_b: PatchSet, params: FuseParams, grid: PatchGrid,
              rng: np.random.Generator) -> PatchMapping:
    """Blend two overlapping entities along a band around their overlap.

    Non-overlapping entities yield an empty mapping. Band patches are
    grouped by nearest farthest-point-sampled seed; each group maps through
    its best shared offset into the opposite entity, falling back per patch
    to the nearest opposite patch. A seeded fraction of pairs is then
    mirrored as (reference, target), skipping any that would duplicate an
    existing target.
    """
    _require_in_grid(ent_a, grid, "entity-a patch")
    _require_in_grid(ent_b, grid, "entity-b patch")
    overlap = ent_a & ent_b
    if not overlap:
        return PatchMapping((), Tool.FUSE, grid)
    fg = ent_a | ent_b
    a_only = ent_a - overlap
    b_only = ent_b - overlap
    band = overlap_fusion_band(overlap, fg, params.band_radius, grid)
    if not band:
        return PatchMapping((), Tool.FUSE, grid)

    seeds = farthest_point_sampling(band, params.seeds)
    regions: dict[Coord, list[Coord]] = {s: [] for s in seeds}
    for p in sorted(band):
        nearest = None
        nearest_d = math.inf
        for s in seeds:
            d = abs(p[0] - s[0]) + abs(p[1] - s[1])
            if d < nearest_d:
                nearest_d = d
                nearest = s
        regions[nearest].append(p)

    pairs: list[tuple[Coord, Coord]] = []
    for seed in seeds:
        region = regions[seed]
        if not region:
            continue
        opp = opposite_region(seed, a_only, b_only, fg, band)
        if not opp:
            opp = fg - band
        if not opp:
            logger.warning("fuse: no opposite pool for seed %s; region skipped", seed)
            continue
        delta = best_offset(frozenset(region), opp, params.max_offset, grid, band)
        for p in region:
            pairs.append((p, offset_or_nearest(p, delta, opp, grid, band)))

    if params.reversed_fraction > 0 and pairs:
        n_rev = int(round(params.reversed_fraction * len(pairs)))
        if n_rev:
            chosen = sorted(rng.choice(len(pairs), size=n_rev, replace=False).tolist())
            taken = {t for t, _ in pairs}
            for i in chosen:
                target, reference = pairs[i]
                if reference in taken:
                    continue
                pairs.append((reference, target))
                taken.add(reference)
    return PatchMapping(tuple(pairs), Tool.FUSE, grid)


# ---------------------------------------------------------------------------
# mapping export: the file handed to the pixel oracle, the attention
# verifier, and any external injection pipeline


EXPORT_SCHEMA_VERSION = 1


def mapping_to_dict(mapping: PatchMapping, seed: dict | int | None = None,
                    schedule: dict | None = None) -> dict:
    return {
        "schema_version": EXPORT_SCHEMA_VERSION,
        "grid": {
            "h_p": mapping.grid.h_p,
            "w_p": mapping.grid.w_p,
            "patch_px": mapping.grid.patch_px,
        },
        "tool": mapping.tool.value,
        "artifact_type": mapping.tool.artifact_type,
        "pairs": [
            [to_linear(t, mapping.grid), to_linear(r, mapping.grid)]
            for t, r in mapping.pairs
        ],
        "target_bbox_px": list(mapping.target_bbox_px()) if mapping.pairs else None,
        "seed": seed,
        "schedule": schedule,
    }


def mapping_from_dict(doc: dict) -> PatchMapping:
    grid = PatchGrid(**doc["grid"])
    pairs = tuple(
        (from_linear(t, grid), from_linear(r, grid)) for t, r in doc["pairs"]
    )
    return PatchMapping(pairs, Tool(doc["tool"]), grid)


def save_mapping(doc: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_mapping(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
