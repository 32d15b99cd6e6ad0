"""Scene ingestion: masks, the entity-subentity vocabulary, and grounding.

Masks arrive as files (single-channel PNGs or run-length-encoded entries);
this module converts them to patch sets on the image's grid and attaches
each subentity to the parent entity it overlaps most.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from ._kernels import patch_fg_counts
from .errors import DimensionMismatchError, EmptyPatchSetError
from .grid import PatchGrid, PatchSet

logger = logging.getLogger(__name__)

LEVEL_PERIPHERAL = "peripheral"
LEVEL_INTERMEDIATE = "intermediate"
LEVELS = (LEVEL_PERIPHERAL, LEVEL_INTERMEDIATE)

KIND_ENTITY = "entity"
KIND_SUBENTITY = "subentity"


@dataclass(frozen=True)
class VocabularyEntry:
    """One entity and the named parts it can decompose into."""

    entity: str
    subentities: tuple[tuple[str, str], ...]  # (name, level)

    def __post_init__(self) -> None:
        if not self.entity:
            raise ValueError("entity name must be non-empty")
        for name, level in self.subentities:
            if not name:
                raise ValueError(f"empty subentity name under {self.entity!r}")
            if level not in LEVELS:
                raise ValueError(f"unknown level {level!r} for {self.entity}/{name}")

    def level_of(self, subentity: str) -> str | None:
        for name, level in self.subentities:
            if name == subentity:
                return level
        return None


def load_vocabulary(path: str | Path) -> dict[str, VocabularyEntry]:
    """Read the vocabulary file: JSON mapping entity name to a list of
    ``{"subentity": name, "level": "peripheral"|"intermediate"}``."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    vocab = {}
    for entity, subs in raw.items():
        entries = tuple((s["subentity"], s["level"]) for s in subs)
        vocab[entity] = VocabularyEntry(entity=entity, subentities=entries)
    return vocab


# ---------------------------------------------------------------------------
# run-length encoded masks (COCO convention: column-major, starts with the
# count of zeros, string counts are delta-coded 6-bit chunks offset by 48)


def decode_rle(rle: dict) -> np.ndarray:
    """Decode ``{"size": [H, W], "counts": str}`` to a boolean (H, W) mask."""
    height, width = rle["size"]
    counts = _counts_from_string(rle["counts"])
    total = sum(counts)
    if total != height * width:
        raise ValueError(f"RLE counts sum to {total}, expected {height * width}")
    flat = np.zeros(total, dtype=np.bool_)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape((height, width), order="F")


def encode_rle(mask: np.ndarray) -> dict:
    """Inverse of :func:`decode_rle`."""
    height, width = mask.shape
    flat = np.asarray(mask, dtype=np.bool_).reshape(-1, order="F")
    counts = []
    value = False
    run = 0
    for bit in flat:
        if bit == value:
            run += 1
        else:
            counts.append(run)
            value = not value
            run = 1
    counts.append(run)
    return {"size": [height, width], "counts": _counts_to_string(counts)}


def _counts_from_string(s: str) -> list[int]:
    counts: list[int] = []
    pos = 0
    while pos < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[pos]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def _counts_to_string(counts: list[int]) -> str:
    chars = []
    for i, count in enumerate(counts):
        x = count
        if i > 2:
            x -= counts[i - 2]
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            # sign bit of this 5-bit chunk decides whether x is exhausted
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
    return "".join(chars)


# ---------------------------------------------------------------------------
# pixel masks -> patch sets


def binarize_to_patches(mask: np.ndarray, grid: PatchGrid, patch_fg_threshold: float = 0.5) -> PatchSet:
    """Patch set of all patches whose foreground pixel fraction is >= threshold."""
    if mask.shape != (grid.height_px, grid.width_px):
        raise DimensionMismatchError(
            f"mask {mask.shape} does not match grid pixels "
            f"({grid.height_px}, {grid.width_px})"
        )
    counts = patch_fg_counts(np.ascontiguousarray(mask, dtype=np.bool_), grid.h_p, grid.w_p, grid.patch_px)
    area = grid.patch_px * grid.patch_px
    rows, cols = np.nonzero(counts >= patch_fg_threshold * area)
    return frozenset(zip(rows.tolist(), cols.tolist()))


def overlap_ratio(sub: PatchSet, ent: PatchSet) -> float:
    """|sub ∩ ent| / |sub|. Undefined (raises) for empty sub."""
    if not sub:
        raise EmptyPatchSetError("overlap ratio undefined for an empty subentity set")
    return len(sub & ent) / len(sub)


@dataclass(frozen=True)
class MaskInstance:
    """One segmented instance: its label, kind, pixel mask, and patch set."""

    label: str
    kind: str
    mask: np.ndarray
    patch_set: PatchSet

    @classmethod
    def from_mask(cls, label: str, kind: str, mask: np.ndarray, grid: PatchGrid,
                  patch_fg_threshold: float = 0.5) -> "MaskInstance":
        if kind not in (KIND_ENTITY, KIND_SUBENTITY):
            raise ValueError(f"unknown instance kind {kind!r}")
        return cls(label=label, kind=kind, mask=np.asarray(mask, dtype=np.bool_),
                   patch_set=binarize_to_patches(mask, grid, patch_fg_threshold))


@dataclass(frozen=True)
class GroundedSubentity:
    instance: MaskInstance
    parent_index: int
    level: str
    ratio: float


@dataclass(frozen=True)
class GroundedScene:
    """All grounded instances of one image, ready for the toolbox."""

    grid: PatchGrid
    entities: tuple[MaskInstance, ...]
    subentities: tuple[GroundedSubentity, ...]
    caption: str = ""
    image_id: str = ""


def ground_scene(entities: list[MaskInstance], subentities: list[MaskInstance],
                 vocab: dict[str, VocabularyEntry], grid: PatchGrid,
                 containment_threshold: float = 0.5, caption: str = "",
                 image_id: str = "") -> GroundedScene:
    """Attach each subentity to the entity it overlaps most.

    A subentity is kept iff its best overlap ratio reaches the containment
    threshold and a level can be resolved from the vocabulary; otherwise it
    is dropped with a warning. Ties go to the lowest entity index.
    """
    grounded = []
    for sub in subentities:
        if not sub.patch_set:
            logger.warning("dropped subentity %r (%s): empty patch set", sub.label, image_id)
            continue
        best_idx, best_ratio = -1, -1.0
        for idx, ent in enumerate(entities):
            ratio = overlap_ratio(sub.patch_set, ent.patch_set)
            if ratio > best_ratio:
                best_idx, best_ratio = idx, ratio
        if best_idx < 0 or best_ratio < containment_threshold:
            logger.warning(
                "dropped subentity %r (%s): max overlap %.3f below threshold %.3f",
                sub.label, image_id, max(best_ratio, 0.0), containment_threshold,
            )
            continue
        level = _resolve_level(vocab, entities[best_idx].label, sub.label)
        if level is None:
            logger.warning(
                "dropped subentity %r (%s): not in vocabulary under %r",
                sub.label, image_id, entities[best_idx].label,
            )
            continue
        grounded.append(GroundedSubentity(sub, best_idx, level, best_ratio))
    return GroundedScene(
        grid=grid, entities=tuple(entities), subentities=tuple(grounded),
        caption=caption, image_id=image_id,
    )


def _resolve_level(vocab: dict[str, VocabularyEntry], entity_label: str, sub_label: str) -> str | None:
    entry = vocab.get(entity_label)
    if entry is not None:
        level = entry.level_of(sub_label)
        if level is not None:
            return level
    # fall back to any entity listing this part name
    for entry in vocab.values():
        level = entry.level_of(sub_label)
        if level is not None:
            return level
    return None


# ---------------------------------------------------------------------------
# scene manifests (one JSON document per image)


def load_scene_manifest(path: str | Path) -> dict:
    """Read a per-image manifest listing the image, caption, patch size, and
    instance masks (``mask_file`` relative to the manifest, or inline ``rle``)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("image", "patch_px", "instances"):
        if key not in doc:
            raise ValueError(f"scene manifest {path} missing key {key!r}")
    return doc


def scene_from_manifest(manifest: dict, base_dir: str | Path,
                        vocab: dict[str, VocabularyEntry],
                        patch_fg_threshold: float = 0.5,
                        containment_threshold: float = 0.5) -> tuple[GroundedScene, np.ndarray]:
    """Load the image and all masks named by a manifest, then ground them.

    Returns the scene and the image array. Image sides must be exact
    multiples of ``patch_px``.
    """
    base = Path(base_dir)
    image = imageio.load_rgb(base / manifest["image"])
    grid = PatchGrid.for_image(image.shape[0], image.shape[1], manifest["patch_px"])
    entities, subentities = [], []
    for inst in manifest["instances"]:
        if "mask_file" in inst:
            mask = imageio.load_mask(base / inst["mask_file"])
        elif "rle" in inst:
            mask = decode_rle(inst["rle"])
        else:
            raise ValueError(f"instance {inst.get('label')!r} has neither mask_file nor rle")
        instance = MaskInstance.from_mask(inst["label"], inst["kind"], mask, grid, patch_fg_threshold)
        (entities if instance.kind == KIND_ENTITY else subentities).append(instance)
    image_id = Path(manifest["image"]).stem
    scene = ground_scene(entities, subentities, vocab, grid,
                         containment_threshold=containment_threshold,
                         caption=manifest.get("caption", ""), image_id=image_id)
    return scene, image
