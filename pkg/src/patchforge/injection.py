"""Applies patch mappings two ways.

A desk-scale single-head attention layer with 2D rotary embeddings checks
the position/value rewrite numerically: target rows take the reference
patch's rotary position and cached value row, background rows keep their
own position and always reuse the cached values. A pixel-space oracle
renders the same mapping bit-exactly for dataset construction. Step and
block gating for an external denoiser is modeled as schedule metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, UnknownArtifactTypeError
from .grid import ARTIFACT_TYPES, PatchGrid, PatchMapping, patch_pixel_rect, to_linear
from .imageio import check_rgb

# ---------------------------------------------------------------------------
# rotary embeddings: 2D axial, half the dims rotate with the row index and
# half with the column index


def _rope_frequencies(dim: int, base: float) -> np.ndarray:
    if dim % 4:
        raise ValueError(f"dim must be a multiple of 4 for 2D axial rotation, got {dim}")
    i = np.arange(dim // 4, dtype=np.float64)
    return base ** (-2.0 * i / (dim // 2))


def rope_apply(vec: np.ndarray, pos: tuple[int, int], base: float = 10000.0) -> np.ndarray:
    """Rotate one d-vector by its patch position. Norm-preserving."""
    return rope_rows(vec.reshape(1, -1), np.array([pos], dtype=np.int64), base)[0]


def rope_rows(x: np.ndarray, positions: np.ndarray, base: float = 10000.0) -> np.ndarray:
    """Rotate each row of (N, d) by its (row, col) position."""
    n, dim = x.shape
    freqs = _rope_frequencies(dim, base)
    angles = np.empty((n, dim // 2), dtype=np.float64)
    angles[:, : dim // 4] = positions[:, 0:1] * freqs
    angles[:, dim // 4 :] = positions[:, 1:2] * freqs
    cos = np.cos(angles)
    sin = np.sin(angles)
    even = x[:, 0::2]
    odd = x[:, 1::2]
    out = np.empty_like(x, dtype=np.float64)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


# ---------------------------------------------------------------------------
# toy attention layer


@dataclass(frozen=True)
class ToyAttentionLayer:
    """Single-head self-attention over one patch grid."""

    grid: PatchGrid
    dim: int
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    rope_base: float = 10000.0

    def __post_init__(self) -> None:
        _rope_frequencies(self.dim, self.rope_base)  # validates dim
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.shape != (self.dim, self.dim):
                raise DimensionMismatchError(f"{name} must be ({self.dim}, {self.dim}), got {w.shape}")
            if not np.isfinite(w).all():
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def n_patches(self) -> int:
        return self.grid.n

    def positions(self) -> np.ndarray:
        """(N, 2) row-major patch positions."""
        rows, cols = np.divmod(np.arange(self.grid.n, dtype=np.int64), self.grid.w_p)
        return np.stack([rows, cols], axis=1)

    @classmethod
    def seeded(cls, grid: PatchGrid, dim: int, seed: int, rope_base: float = 10000.0) -> "ToyAttentionLayer":
        """Unit-scaled random weights; stands in for a trained layer."""
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim)
        return cls(
            grid=grid,
            dim=dim,
            w_q=rng.standard_normal((dim, dim)) * scale,
            w_k=rng.standard_normal((dim, dim)) * scale,
            w_v=rng.standard_normal((dim, dim)) * scale,
            rope_base=rope_base,
        )


@dataclass(frozen=True)
class ValueCache:
    """Per-layer value rows captured during the inversion pass."""

    v_inv: np.ndarray


def _check_input(layer: ToyAttentionLayer, x: np.ndarray) -> None:
    if x.shape != (layer.n_patches, layer.dim):
        raise DimensionMismatchError(
            f"input must be ({layer.n_patches}, {layer.dim}), got {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite entries")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _attend(layer: ToyAttentionLayer, x: np.ndarray, positions: np.ndarray,
            v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = rope_rows(x @ layer.w_q, positions, layer.rope_base)
    k = rope_rows(x @ layer.w_k, positions, layer.rope_base)
    weights = _softmax_rows(q @ k.T / np.sqrt(layer.dim))
    return weights @ v, weights


def attention_inversion_pass(layer: ToyAttentionLayer, x: np.ndarray) -> tuple[np.ndarray, ValueCache]:
    """Vanilla softmax attention with per-patch rotary Q/K; caches the values."""
    _check_input(layer, x)
    v = x @ layer.w_v
    out, _ = _attend(layer, x, layer.positions(), v)
    return out, ValueCache(v_inv=v.copy())


def attention_injection_pass(layer: ToyAttentionLayer, x: np.ndarray, cache: ValueCache,
                             mapping: PatchMapping, pe_on: bool, value_on: bool,
                             return_intermediates: bool = False):
    """Attention with the mapping's position/value rewrite applied.

    Target rows: rotary position of the reference patch when ``pe_on``;
    cached value row of the reference when ``value_on``. Background rows
    keep their own position and always take their cached value row.
    """
    _check_input(layer, x)
    if cache.v_inv.shape != (layer.n_patches, layer.dim):
        raise DimensionMismatchError("cache shape does not match layer")
    if mapping.grid.n != layer.n_patches:
        raise DimensionMismatchError("mapping grid does not match layer patch count")

    positions = layer.positions().copy()
    v = x @ layer.w_v
    v_used = cache.v_inv.copy()  # background rule: every non-target row is cached
    for target, reference in mapping.pairs:
        ti = to_linear(target, mapping.grid)
        ri = to_linear(reference, mapping.grid)
        if pe_on:
            positions[ti] = reference
        if value_on:
            v_used[ti] = cache.v_inv[ri]
        else:
            v_used[ti] = v[ti]
    out, weights = _attend(layer, x, positions, v_used)
    if return_intermediates:
        return out, {"positions": positions, "v": v_used, "weights": weights}
    return out


# ---------------------------------------------------------------------------
# step/block schedule exported for an external denoiser

DEFAULT_PE_DISABLED = {"duplication": 5, "distortion": 5, "fusion": 5, "omission": 1}


@dataclass(frozen=True)
class InjectionSchedule:
    """Gating metadata: which denoising steps keep PE injection on, and
    which steps/blocks carry value injection."""

    total_steps: int = 25
    pe_disabled_final_steps: dict = field(default_factory=lambda: dict(DEFAULT_PE_DISABLED))
    value_steps: int = 15
    value_blocks: tuple[int, int] = (20, 38)

    def __post_init__(self) -> None:
        for artifact_type, count in self.pe_disabled_final_steps.items():
            if artifact_type not in ARTIFACT_TYPES:
                raise UnknownArtifactTypeError(artifact_type)
            if not 0 <= count < self.total_steps:
                raise ValueError(f"pe_disabled_final_steps[{artifact_type}] out of range")
        if not 0 <= self.value_steps <= self.total_steps:
            raise ValueError("value_steps must be within total_steps")
        object.__setattr__(self, "value_blocks", tuple(self.value_blocks))

    def to_dict(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "pe_disabled_final_steps": dict(self.pe_disabled_final_steps),
            "value_steps": self.value_steps,
            "value_blocks": list(self.value_blocks),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "InjectionSchedule":
        return cls(
            total_steps=doc["total_steps"],
            pe_disabled_final_steps=dict(doc["pe_disabled_final_steps"]),
            value_steps=doc["value_steps"],
            value_blocks=tuple(doc["value_blocks"]),
        )


def schedule_gates(schedule: InjectionSchedule, artifact_type: str, step: int,
                   block: int) -> tuple[bool, bool]:
    """(pe_on, value_on) for one denoising step and transformer block."""
    if artifact_type not in schedule.pe_disabled_final_steps:
        raise UnknownArtifactTypeError(artifact_type)
    if not 0 <= step < schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps})")
    pe_on = step < schedule.total_steps - schedule.pe_disabled_final_steps[artifact_type]
    lo, hi = schedule.value_blocks
    value_on = step < schedule.value_steps and lo <= block <= hi
    return pe_on, value_on


# ---------------------------------------------------------------------------
# pixel-space oracle


def render_pixel_oracle(img: np.ndarray, mapping: PatchMapping, grid: PatchGrid,
                        blend: int = 0) -> np.ndarray:
    """Replace each target patch block with its reference block.

    With ``blend=0`` the copy is bit-exact and background pixels are
    untouched. ``blend > 0`` feathers the replaced block edges (cosmetic
    only); the feather stays inside target blocks.
    """
    check_rgb(img)
    if img.shape[:2] != (grid.height_px, grid.width_px):
        raise DimensionMismatchError(
            f"image {img.shape[:2]} does not match grid pixels "
            f"({grid.height_px}, {grid.width_px})"
        )
    out = img.copy()
    alpha = _feather_alpha(grid.patch_px, blend) if blend > 0 else None
    for target, reference in mapping.pairs:
        tx0, ty0, tx1, ty1 = patch_pixel_rect(target, grid)
        rx0, ry0, rx1, ry1 = patch_pixel_rect(reference, grid)
        ref_block = img[ry0:ry1, rx0:rx1]
        if alpha is None:
            out[ty0:ty1, tx0:tx1] = ref_block
        else:
            orig = img[ty0:ty1, tx0:tx1].astype(np.float64)
            mixed = alpha[..., None] * ref_block.astype(np.float64) + (1.0 - alpha[..., None]) * orig
            out[ty0:ty1, tx0:tx1] = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    return out


def _feather_alpha(patch_px: int, blend: int) -> np.ndarray:
    idx = np.arange(patch_px)
    edge_dist = np.minimum(idx, patch_px - 1 - idx)
    ramp = np.minimum(1.0, (edge_dist + 1) / (blend + 1))
    return np.minimum(ramp[:, None], ramp[None, :])


def render_overlay(img: np.ndarray, mapping: PatchMapping, grid: PatchGrid,
                   target_color: tuple[int, int, int] = (255, 0, 0),
                   reference_color: tuple[int, int, int] = (0, 255, 0)) -> np.ndarray:
    """Outline reference patches, then target patches, on patch boundaries only."""
    check_rgb(img)
    if img.shape[:2] != (grid.height_px, grid.width_px):
        raise DimensionMismatchError("image does not match grid pixels")
    out = img.copy()
    for _, reference in mapping.pairs:
        _outline(out, patch_pixel_rect(reference, grid), reference_color)
    for target, _ in mapping.pairs:
        _outline(out, patch_pixel_rect(target, grid), target_color)
    return out


def _outline(img: np.ndarray, rect: tuple[int, int, int, int], color: tuple[int, int, int]) -> None:
    x0, y0, x1, y1 = rect
    img[y0, x0:x1] = color
    img[y1 - 1, x0:x1] = color
    img[y0:y1, x0] = color
    img[y0:y1, x1 - 1] = color


# ---------------------------------------------------------------------------
# desk-scale numeric verification used by the pipeline's inject stage


def verify_mapping_numerics(mapping: PatchMapping, dim: int = 16, seed: int = 0) -> dict:
    """Numeric checks that the injection contract holds for this mapping."""
    layer = ToyAttentionLayer.seeded(mapping.grid, dim, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((layer.n_patches, dim))
    vanilla, cache = attention_inversion_pass(layer, x)

    empty = PatchMapping((), mapping.tool, mapping.grid)
    noop = attention_injection_pass(layer, x, cache, empty, pe_on=True, value_on=True)
    noop_err = float(np.abs(noop - vanilla).max())

    injected, inter = attention_injection_pass(
        layer, x, cache, mapping, pe_on=True, value_on=True, return_intermediates=True
    )
    target_rows = sorted(to_linear(t, mapping.grid) for t in mapping.targets)
    background = np.ones(layer.n_patches, dtype=bool)
    background[target_rows] = False
    return {
        "noop_max_abs_err": noop_err,
        "background_values_cached": bool(
            np.array_equal(inter["v"][background], cache.v_inv[background])
        ),
        "target_values_cached": bool(
            all(
                np.array_equal(
                    inter["v"][to_linear(t, mapping.grid)],
                    cache.v_inv[to_linear(r, mapping.grid)],
                )
                for t, r in mapping.pairs
            )
        ),
        "softmax_row_sum_err": float(np.abs(inter["weights"].sum(axis=1) - 1.0).max()),
        "injected_output_delta": float(np.abs(injected - vanilla).max()),
    }
