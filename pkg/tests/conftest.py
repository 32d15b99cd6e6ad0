"""Shared fixtures: a tiny synthetic corpus with constructed masks.

Three base scenes, one per tool family:
  * scene_ar: a blob entity with a uniquely-colored peripheral "nub"
    (add/remove candidates),
  * scene_di: a tower entity with an intermediate "body" whose patches use
    pairwise-distant colors (distort candidate with a predictable
    perceptual distance),
  * scene_fu: two overlapping entities (fuse candidate).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from patchforge import imageio
from patchforge.perception import encode_rle

PATCH_PX = 16
GRID_SIDE = 8
IMG_SIDE = PATCH_PX * GRID_SIDE

NUB_COLOR = (250, 30, 30)

# corners of an RGB cube: any two distinct entries differ by RMS in [46, 80]
BODY_PALETTE = [
    (60 + 80 * ((i >> 2) & 1), 60 + 80 * ((i >> 1) & 1), 60 + 80 * (i & 1))
    for i in range(8)
]


def _blank(color) -> np.ndarray:
    img = np.zeros((IMG_SIDE, IMG_SIDE, 3), dtype=np.uint8)
    img[:] = color
    return img


def _fill_patches(img: np.ndarray, patches, color) -> None:
    for r, c in patches:
        img[r * PATCH_PX : (r + 1) * PATCH_PX, c * PATCH_PX : (c + 1) * PATCH_PX] = color


def _mask_of(patches) -> np.ndarray:
    mask = np.zeros((IMG_SIDE, IMG_SIDE), dtype=bool)
    for r, c in patches:
        mask[r * PATCH_PX : (r + 1) * PATCH_PX, c * PATCH_PX : (c + 1) * PATCH_PX] = True
    return mask


BLOB_PATCHES = [(r, c) for r in range(2, 6) for c in range(2, 6)]
NUB_PATCHES = [(4, 2), (4, 3), (5, 2), (5, 3)]
TOWER_PATCHES = [(r, c) for r in range(1, 7) for c in range(3, 5)]
BODY_PATCHES = [(r, c) for r in range(2, 6) for c in range(3, 5)]
BALL_PATCHES = [(r, c) for r in range(2, 6) for c in range(1, 5)]
BOX_PATCHES = [(r, c) for r in range(2, 6) for c in range(3, 7)]


def _scene_ar(root: Path, image_id: str) -> dict:
    img = _blank((20, 60, 110))
    _fill_patches(img, BLOB_PATCHES, (90, 160, 70))
    _fill_patches(img, NUB_PATCHES, NUB_COLOR)
    imageio.save_rgb(img, root / f"{image_id}.png")
    imageio.save_mask(_mask_of(BLOB_PATCHES), root / f"{image_id}_blob.png")
    return {
        "image": f"{image_id}.png",
        "patch_px": PATCH_PX,
        "caption": "a green blob with a red nub on a blue background",
        "instances": [
            {"label": "blob", "kind": "entity", "mask_file": f"{image_id}_blob.png"},
            # the nub mask travels inline as RLE to exercise that path
            {"label": "nub", "kind": "subentity", "rle": encode_rle(_mask_of(NUB_PATCHES))},
        ],
    }


def _scene_di(root: Path, image_id: str) -> dict:
    img = _blank((15, 15, 35))
    _fill_patches(img, TOWER_PATCHES, (120, 120, 120))
    for i, patch in enumerate(BODY_PATCHES):
        _fill_patches(img, [patch], BODY_PALETTE[i])
    imageio.save_rgb(img, root / f"{image_id}.png")
    imageio.save_mask(_mask_of(TOWER_PATCHES), root / f"{image_id}_tower.png")
    imageio.save_mask(_mask_of(BODY_PATCHES), root / f"{image_id}_body.png")
    return {
        "image": f"{image_id}.png",
        "patch_px": PATCH_PX,
        "caption": "a gray tower with a multicolored body on a dark background",
        "instances": [
            {"label": "tower", "kind": "entity", "mask_file": f"{image_id}_tower.png"},
            {"label": "body", "kind": "subentity", "mask_file": f"{image_id}_body.png"},
        ],
    }


def _scene_fu(root: Path, image_id: str) -> dict:
    img = _blank((200, 190, 180))
    _fill_patches(img, BALL_PATCHES, (60, 90, 200))
    _fill_patches(img, BOX_PATCHES, (210, 160, 40))
    overlap = [p for p in BALL_PATCHES if p in BOX_PATCHES]
    _fill_patches(img, overlap, (135, 125, 120))
    imageio.save_rgb(img, root / f"{image_id}.png")
    imageio.save_mask(_mask_of(BALL_PATCHES), root / f"{image_id}_ball.png")
    imageio.save_mask(_mask_of(BOX_PATCHES), root / f"{image_id}_box.png")
    return {
        "image": f"{image_id}.png",
        "patch_px": PATCH_PX,
        "caption": "a blue ball pressed against an orange box on a beige table",
        "instances": [
            {"label": "ball", "kind": "entity", "mask_file": f"{image_id}_ball.png"},
            {"label": "box", "kind": "entity", "mask_file": f"{image_id}_box.png"},
        ],
    }


VOCABULARY = {
    "blob": [{"subentity": "nub", "level": "peripheral"}],
    "tower": [{"subentity": "body", "level": "intermediate"}],
    "ball": [],
    "box": [],
}

MOCK_RULES = [
    ["Answer with exactly one word", "Yes"],
    ["describe what is different", "A fabricated copy of the part distorts the object's structure."],
    ["explain why this image as a whole", "The highlighted regions contain implausible structural changes injected into the scene."],
]


def build_corpus(root: Path, n_images: int = 3) -> Path:
    """Write a synthetic corpus; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    builders = [_scene_ar, _scene_di, _scene_fu]
    names = []
    for i in range(n_images):
        image_id = f"scene_{i:03d}"
        manifest = builders[i % 3](root, image_id)
        (root / f"{image_id}.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        names.append(f"{image_id}.json")
    (root / "manifest.json").write_text(json.dumps({"images": names}, indent=1), encoding="utf-8")
    (root / "vocabulary.json").write_text(json.dumps(VOCABULARY, indent=1), encoding="utf-8")
    return root / "manifest.json"


def write_config(path: Path, manifest: Path, output_dir: Path, seed: int = 7,
                 **overrides) -> Path:
    doc = {
        "manifest": str(manifest),
        "output_dir": str(output_dir),
        "vocabulary": str(manifest.parent / "vocabulary.json"),
        "seed": seed,
        "tools": {"distort": {"kernel": "strip"}},
        "client": {"kind": "mock", "rules": MOCK_RULES, "default": "Yes"},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


@pytest.fixture()
def corpus(tmp_path):
    manifest = build_corpus(tmp_path / "corpus", n_images=3)
    return manifest


@pytest.fixture()
def pipeline_config(tmp_path, corpus):
    from patchforge.config import load_config

    config_path = write_config(tmp_path / "config.json", corpus, tmp_path / "out")
    return load_config(config_path)
