"""PNG image IO. 8-bit, bit-exact round-trips (PNG is lossless)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an image as (H, W, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_rgb(image: np.ndarray, path: str | Path) -> None:
    check_rgb(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    """Load a single-channel mask; nonzero pixels are foreground."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) != 0


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def check_rgb(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DimensionMismatchError(
            f"expected (H, W, 3) uint8 image, got shape {image.shape} dtype {image.dtype}"
        )
