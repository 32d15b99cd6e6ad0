"""Quality gates and explanation generation for injected pairs.

Distortion pairs pass through a perceptual-similarity gate; duplication,
omission, and fusion pairs are judged by a remote model from a
masked-original / cropped-original / cropped-artifact triplet. The same
triplet then drives per-region and whole-image explanations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .client import VlmClient
from .errors import DimensionMismatchError, EmptyReplyError, UnknownArtifactTypeError, UnparseableReplyError
from .grid import ARTIFACT_TYPES
from .imageio import check_rgb

logger = logging.getLogger(__name__)

MASK_FILL = (128, 128, 128)

VLM_FILTERED_TYPES = ("duplication", "omission", "fusion")
METRIC_FILTERED_TYPES = ("distortion",)


@dataclass(frozen=True)
class FilterThresholds:
    """Similarity bounds on s = 1 - d; keep iff tau1 <= s <= tau2."""

    tau1: float = 0.5
    tau2: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau1 < self.tau2 <= 1.0:
            raise ValueError(f"need 0 <= tau1 < tau2 <= 1, got ({self.tau1}, {self.tau2})")


@dataclass(frozen=True)
class GateDecision:
    keep: bool
    reason: str | None = None  # "too_similar" | "too_damaged" | "rejected" | "unparseable_reply"


def metric_gate(d: float, thresholds: FilterThresholds) -> GateDecision:
    """Keep iff tau1 <= 1 - d <= tau2 (both bounds closed)."""
    if d < 0:
        raise ValueError(f"perceptual distance must be >= 0, got {d}")
    similarity = 1.0 - d
    if similarity > thresholds.tau2:
        return GateDecision(keep=False, reason="too_similar")
    if similarity < thresholds.tau1:
        return GateDecision(keep=False, reason="too_damaged")
    return GateDecision(keep=True)


def patch_rms_distance(a: np.ndarray, b: np.ndarray, patch_px: int) -> float:
    """Default desk-scale perceptual distance: mean per-patch RMS difference,
    normalized to [0, 1]. Both crops must be patch-aligned and equal-sized."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"crops differ in shape: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if h % patch_px or w % patch_px:
        raise DimensionMismatchError(f"crop {w}x{h} is not tiled by patch_px={patch_px}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    sq = (diff * diff).reshape(h // patch_px, patch_px, w // patch_px, patch_px, -1)
    per_patch_rms = np.sqrt(sq.mean(axis=(1, 3, 4)))
    return float(per_patch_rms.mean() / 255.0)


# ---------------------------------------------------------------------------
# triplets


@dataclass(frozen=True)
class Triplet:
    """What the judge sees: masked scene context plus the two crops."""

    masked_original: np.ndarray
    cropped_original: np.ndarray
    cropped_artifact: np.ndarray
    region: tuple[int, int, int, int]
    entity_name: str

    def images(self) -> list[np.ndarray]:
        return [self.masked_original, self.cropped_original, self.cropped_artifact]


def build_triplet(original: np.ndarray, artifact: np.ndarray,
                  target_bbox: tuple[int, int, int, int], entity_name: str) -> Triplet:
    check_rgb(original)
    check_rgb(artifact)
    if original.shape != artifact.shape:
        raise DimensionMismatchError(
            f"original {original.shape} and artifact {artifact.shape} differ"
        )
    x0, y0, x1, y1 = target_bbox
    h, w = original.shape[:2]
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"bbox {target_bbox} out of bounds for {w}x{h} image")
    masked = original.copy()
    masked[y0:y1, x0:x1] = MASK_FILL
    return Triplet(
        masked_original=masked,
        cropped_original=original[y0:y1, x0:x1].copy(),
        cropped_artifact=artifact[y0:y1, x0:x1].copy(),
        region=(x0, y0, x1, y1),
        entity_name=entity_name,
    )


# ---------------------------------------------------------------------------
# prompt templates (versioned text assets)


def _load_prompt(name: str) -> str:
    return resources.files("patchforge.prompts").joinpath(name).read_text(encoding="utf-8")


def artifact_type_description(artifact_type: str) -> str:
    if artifact_type not in ARTIFACT_TYPES:
        raise UnknownArtifactTypeError(artifact_type)
    return _load_prompt(f"type_{artifact_type}.txt").strip()


def render_filter_prompt(artifact_type: str, entity_name: str) -> str:
    return _load_prompt("filter.txt").format(
        entity=entity_name, artifact_type_description=artifact_type_description(artifact_type)
    )


def render_local_prompt(artifact_type: str, entity_name: str) -> str:
    return _load_prompt("local_explanation.txt").format(
        entity=entity_name, artifact_type_description=artifact_type_description(artifact_type)
    )


def render_global_prompt(locals_: list[tuple[tuple[int, int, int, int], str]]) -> str:
    lines = [f"{list(bbox)}: {text}" for bbox, text in locals_]
    return _load_prompt("global_explanation.txt").format(bbox_list="\n".join(lines))


# ---------------------------------------------------------------------------
# judge calls


def parse_yes_no(reply: str) -> bool:
    """Strict parse: the reply must be a bare yes/no token."""
    token = reply.strip().rstrip(".!").strip().lower()
    if token == "yes":
        return True
    if token == "no":
        return False
    raise UnparseableReplyError(f"expected yes/no, got {reply!r}")


def vlm_filter(triplet: Triplet, artifact_type: str, client: VlmClient) -> GateDecision:
    """Binary judgment on the triplet; unparseable replies reject with a flag."""
    if artifact_type not in VLM_FILTERED_TYPES:
        raise UnknownArtifactTypeError(
            f"{artifact_type} is metric-gated, not judge-filtered"
        )
    prompt = render_filter_prompt(artifact_type, triplet.entity_name)
    reply = client.complete(prompt, triplet.images())
    try:
        keep = parse_yes_no(reply)
    except UnparseableReplyError:
        logger.warning("unparseable filter reply %r", reply[:80])
        return GateDecision(keep=False, reason="unparseable_reply")
    return GateDecision(keep=keep, reason=None if keep else "rejected")


def local_explanation(triplet: Triplet, artifact_type: str, client: VlmClient) -> str:
    prompt = render_local_prompt(artifact_type, triplet.entity_name)
    reply = client.complete(prompt, triplet.images()).strip()
    if not reply:
        raise EmptyReplyError("empty local explanation")
    return reply


def global_explanation(artifact_image: np.ndarray,
                       locals_: list[tuple[tuple[int, int, int, int], str]],
                       client: VlmClient) -> str:
    if not locals_:
        raise ValueError("global explanation needs at least one local explanation")
    prompt = render_global_prompt(locals_)
    reply = client.complete(prompt, [artifact_image]).strip()
    if not reply:
        raise EmptyReplyError("empty global explanation")
    return reply
