"""Patch-grid coordinate system: grids, patch sets, and target-reference mappings.

Everything downstream (tools, injectors, exports) speaks in terms of these
types. Coordinates are 0-based ``(row, col)`` tuples; linearization is
row-major. All values are immutable after construction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyPatchSetError, InvalidCoordinateError

Coord = tuple[int, int]
PatchSet = frozenset[Coord]


class Tool(str, enum.Enum):
    ADD = "add"
    REMOVE = "remove"
    DISTORT = "distort"
    FUSE = "fuse"

    @property
    def artifact_type(self) -> str:
        return _TOOL_ARTIFACT[self]


_TOOL_ARTIFACT = {
    Tool.ADD: "duplication",
    Tool.REMOVE: "omission",
    Tool.DISTORT: "distortion",
    Tool.FUSE: "fusion",
}

ARTIFACT_TYPES = tuple(_TOOL_ARTIFACT.values())


@dataclass(frozen=True)
class PatchGrid:
    """A regular grid of square patches: ``h_p`` rows by ``w_p`` columns.

    ``patch_px`` is the side length of one patch in pixels, so the grid
    tiles an image of exactly ``w_p * patch_px`` by ``h_p * patch_px``.
    """

    h_p: int
    w_p: int
    patch_px: int

    def __post_init__(self) -> None:
        if self.h_p < 1 or self.w_p < 1 or self.patch_px < 1:
            raise ValueError(
                f"grid dimensions must be >= 1, got "
                f"({self.h_p}, {self.w_p}, patch_px={self.patch_px})"
            )

    @property
    def n(self) -> int:
        """Total patch count."""
        return self.h_p * self.w_p

    @property
    def width_px(self) -> int:
        return self.w_p * self.patch_px

    @property
    def height_px(self) -> int:
        return self.h_p * self.patch_px

    def contains(self, coord: Coord) -> bool:
        row, col = coord
        return 0 <= row < self.h_p and 0 <= col < self.w_p

    def all_coords(self) -> PatchSet:
        return frozenset((r, c) for r in range(self.h_p) for c in range(self.w_p))

    @classmethod
    def for_image(cls, height_px: int, width_px: int, patch_px: int) -> "PatchGrid":
        """Grid tiling an image exactly; rejects non-multiple dimensions."""
        if height_px % patch_px or width_px % patch_px:
            raise ValueError(
                f"image {width_px}x{height_px} is not tiled by patch_px={patch_px}"
            )
        return cls(height_px // patch_px, width_px // patch_px, patch_px)


def to_linear(coord: Coord, grid: PatchGrid) -> int:
    """Row-major linear index of a coordinate."""
    if not grid.contains(coord):
        raise InvalidCoordinateError(f"{coord} outside {grid.h_p}x{grid.w_p} grid")
    row, col = coord
    return row * grid.w_p + col


def from_linear(index: int, grid: PatchGrid) -> Coord:
    """Inverse of :func:`to_linear`."""
    if not 0 <= index < grid.n:
        raise InvalidCoordinateError(f"linear index {index} outside grid of {grid.n}")
    return divmod(index, grid.w_p)


def clip_candidates(cands: Iterable[Coord], grid: PatchGrid) -> PatchSet:
    """Keep only in-grid candidates; out-of-grid ones are discarded, not projected."""
    return frozenset(c for c in cands if grid.contains(c))


def patch_pixel_rect(coord: Coord, grid: PatchGrid) -> tuple[int, int, int, int]:
    """Half-open pixel rectangle ``(x0, y0, x1, y1)`` covered by a patch."""
    if not grid.contains(coord):
        raise InvalidCoordinateError(f"{coord} outside {grid.h_p}x{grid.w_p} grid")
    row, col = coord
    px = grid.patch_px
    return (col * px, row * px, (col + 1) * px, (row + 1) * px)


def patch_set_bbox_px(coords: Iterable[Coord], grid: PatchGrid) -> tuple[int, int, int, int]:
    """Union pixel bounding box ``(x_min, y_min, x_max, y_max)`` of a patch set."""
    coords = list(coords)
    if not coords:
        raise EmptyPatchSetError("bounding box of an empty patch set is undefined")
    rects = [patch_pixel_rect(c, grid) for c in coords]
    return (
        min(r[0] for r in rects),
        min(r[1] for r in rects),
        max(r[2] for r in rects),
        max(r[3] for r in rects),
    )


def coords_to_array(coords: Iterable[Coord]) -> np.ndarray:
    """Sorted ``(n, 2)`` int64 array; lexicographic order makes downstream
    first-index tie-breaks equal lexicographic tie-breaks."""
    arr = np.array(sorted(coords), dtype=np.int64)
    return arr.reshape(-1, 2)


@dataclass(frozen=True)
class PatchMapping:
    """Ordered target-reference pairs produced by one tool invocation.

    Invariants enforced at construction: each target appears at most once and
    every coordinate is valid for ``grid``. The background set is everything
    not targeted.
    """

    pairs: tuple[tuple[Coord, Coord], ...]
    tool: Tool
    grid: PatchGrid

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple((tuple(t), tuple(r)) for t, r in self.pairs))
        seen = set()
        for target, reference in self.pairs:
            if target in seen:
                raise ValueError(f"duplicate target {target} in mapping")
            seen.add(target)
            for coord in (target, reference):
                if not self.grid.contains(coord):
                    raise InvalidCoordinateError(
                        f"{coord} outside {self.grid.h_p}x{self.grid.w_p} grid"
                    )

    @property
    def targets(self) -> tuple[Coord, ...]:
        return tuple(t for t, _ in self.pairs)

    @property
    def references(self) -> tuple[Coord, ...]:
        return tuple(r for _, r in self.pairs)

    @property
    def target_set(self) -> PatchSet:
        return frozenset(self.targets)

    def background(self) -> PatchSet:
        return self.grid.all_coords() - self.target_set

    def __len__(self) -> int:
        return len(self.pairs)

    def target_bbox_px(self) -> tuple[int, int, int, int] | None:
        """Union pixel bbox of all targets, or None for an empty mapping."""
        if not self.pairs:
            return None
        return patch_set_bbox_px(self.targets, self.grid)
