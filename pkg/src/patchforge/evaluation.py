"""Evaluation protocol: binary detection, localization, explanation metrics.

Region predictions of any representation (bbox, polygon, heatmap) are
unified to pixel-wise binary maps before scoring. Localization is scored
only on samples with positive ground truth.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ._kernels import lcs_length, polygon_even_odd
from .errors import DimensionMismatchError, MalformedGeometryError

REGION_KINDS = ("bbox", "polygon", "heatmap")


@dataclass(frozen=True)
class RegionAnnotation:
    """One region in some representation, tied to its image dimensions."""

    kind: str
    payload: object
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.kind not in REGION_KINDS:
            raise MalformedGeometryError(f"unknown region kind {self.kind!r}")


def rasterize(region: RegionAnnotation, heat_threshold: float = 0.5) -> np.ndarray:
    """Unify a region to a boolean (H, W) pixel map.

    bbox: filled half-open rectangle; polygon: even-odd fill sampled at
    pixel centers; heatmap: values >= threshold.
    """
    h, w = region.height, region.width
    if region.kind == "bbox":
        x0, y0, x1, y1 = region.payload
        if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
            raise MalformedGeometryError(f"bbox {region.payload} outside {w}x{h}")
        out = np.zeros((h, w), dtype=np.bool_)
        out[int(y0):int(y1), int(x0):int(x1)] = True
        return out
    if region.kind == "polygon":
        verts = np.asarray(region.payload, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise MalformedGeometryError("polygon needs >= 3 (x, y) vertices")
        return polygon_even_odd(np.ascontiguousarray(verts[:, 0]),
                                np.ascontiguousarray(verts[:, 1]), h, w)
    heat = np.asarray(region.payload, dtype=np.float64)
    if heat.shape != (h, w):
        raise MalformedGeometryError(f"heatmap {heat.shape} does not match {h}x{w}")
    if heat.min() < 0.0 or heat.max() > 1.0:
        raise MalformedGeometryError("heatmap values must lie in [0, 1]")
    return heat >= heat_threshold


def rasterize_union(regions: Iterable[RegionAnnotation], width: int, height: int,
                    heat_threshold: float = 0.5) -> np.ndarray:
    out = np.zeros((height, width), dtype=np.bool_)
    for region in regions:
        if (region.width, region.height) != (width, height):
            raise DimensionMismatchError("region dims differ from image dims")
        out |= rasterize(region, heat_threshold)
    return out


def localization_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Pixel IoU and positive-pixel F1; both 1.0 when both maps are empty."""
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"map shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    union = tp + fp + fn
    if union == 0:
        return 1.0, 1.0
    iou = tp / union
    f1 = 2 * tp / (2 * tp + fp + fn)
    return iou, f1


def binary_metrics(preds: Sequence[bool], gts: Sequence[bool]) -> tuple[float, float]:
    """Accuracy and macro F1 over yes/no labels.

    A class absent from both predictions and ground truth contributes 0 to
    the macro mean.
    """
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(gts)} gts")
    if not preds:
        raise ValueError("binary metrics need at least one sample")
    p = np.asarray([_as_bool(v) for v in preds])
    g = np.asarray([_as_bool(v) for v in gts])
    accuracy = float(np.mean(p == g))
    f1s = []
    for cls in (True, False):
        tp = int(np.count_nonzero((p == cls) & (g == cls)))
        fp = int(np.count_nonzero((p == cls) & (g != cls)))
        fn = int(np.count_nonzero((p != cls) & (g == cls)))
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2 * tp / denom)
    return accuracy, float(np.mean(f1s))


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("yes", "true", "1"):
            return True
        if lowered in ("no", "false", "0"):
            return False
    raise ValueError(f"not a yes/no label: {value!r}")


# ---------------------------------------------------------------------------
# explanation metrics

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace-split, strip ASCII punctuation from token edges."""
    tokens = []
    for raw in text.lower().split():
        token = raw.strip(_PUNCT)
        if token:
            tokens.append(token)
    return tokens


def rouge_l(pred: str, ref: str) -> float:
    """LCS-based F-score over tokens; 0 when either side is empty."""
    pred_tokens = tokenize(pred)
    ref_tokens = tokenize(ref)
    if not pred_tokens or not ref_tokens:
        return 0.0
    ids: dict[str, int] = {}
    a = np.array([ids.setdefault(t, len(ids)) for t in pred_tokens], dtype=np.int64)
    b = np.array([ids.setdefault(t, len(ids)) for t in ref_tokens], dtype=np.int64)
    lcs = int(lcs_length(a, b))
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred_tokens)
    recall = lcs / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def css(pred: str, ref: str, embedder: Callable[[str], np.ndarray] | object) -> float:
    """Cosine similarity between sentence embeddings from a pluggable embedder."""
    embed = embedder.embed if hasattr(embedder, "embed") else embedder
    a = np.asarray(embed(pred), dtype=np.float64)
    b = np.asarray(embed(ref), dtype=np.float64)
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        raise ValueError("embedding with zero norm")
    return float(np.dot(a, b) / denom)


# ---------------------------------------------------------------------------
# benchmark harness


def region_from_dict(doc: dict, width: int, height: int) -> RegionAnnotation:
    kind = doc["kind"]
    payload = doc["payload"]
    if kind == "heatmap":
        payload = np.asarray(payload, dtype=np.float64)
    return RegionAnnotation(kind=kind, payload=payload, width=width, height=height)


def evaluate_benchmark(gt_entries: list[dict], pred_entries: list[dict],
                       heat_threshold: float = 0.5, loc_aggregate: str = "mean",
                       embedder=None) -> dict:
    """Score predictions against a benchmark manifest.

    Entries are joined by image path. Each ground-truth entry carries
    ``image``, ``width``, ``height``, ``label`` (yes/no), ``bboxes`` and
    ``explanation``; predictions carry ``label``, ``regions`` and
    ``explanation``. Localization runs only on positive ground truth;
    ``loc_aggregate`` is per-image "mean" or pixel-pooled "micro".
    """
    if loc_aggregate not in ("mean", "micro"):
        raise ValueError(f"unknown localization aggregate {loc_aggregate!r}")
    preds_by_image = {p["image"]: p for p in pred_entries}
    binary_p, binary_g = [], []
    per_sample = []
    ious, f1s = [], []
    pooled_tp = pooled_fp = pooled_fn = 0
    rouges, csss = [], []
    for gt in gt_entries:
        image = gt["image"]
        pred = preds_by_image.get(image)
        if pred is None:
            continue
        row: dict = {"image": image}
        binary_p.append(_as_bool(pred["label"]))
        binary_g.append(_as_bool(gt["label"]))
        row["label_pred"] = binary_p[-1]
        row["label_gt"] = binary_g[-1]
        if _as_bool(gt["label"]) and gt.get("bboxes"):
            width, height = gt["width"], gt["height"]
            gt_map = rasterize_union(
                [RegionAnnotation("bbox", b, width, height) for b in gt["bboxes"]],
                width, height, heat_threshold,
            )
            pred_map = rasterize_union(
                [region_from_dict(r, width, height) for r in pred.get("regions", [])],
                width, height, heat_threshold,
            )
            iou, f1 = localization_metrics(pred_map, gt_map)
            ious.append(iou)
            f1s.append(f1)
            pooled_tp += int(np.count_nonzero(pred_map & gt_map))
            pooled_fp += int(np.count_nonzero(pred_map & ~gt_map))
            pooled_fn += int(np.count_nonzero(~pred_map & gt_map))
            row["iou"] = iou
            row["f1"] = f1
        if _as_bool(gt["label"]) and gt.get("explanation"):
            score = rouge_l(pred.get("explanation", ""), gt["explanation"])
            rouges.append(score)
            row["rouge_l"] = score
            if embedder is not None:
                sim = css(pred.get("explanation", ""), gt["explanation"], embedder)
                csss.append(sim)
                row["css"] = sim
        per_sample.append(row)

    report: dict = {"n_samples": len(per_sample), "per_sample": per_sample}
    if binary_p:
        accuracy, macro_f1 = binary_metrics(binary_p, binary_g)
        report["binary"] = {"accuracy": accuracy, "macro_f1": macro_f1, "n": len(binary_p)}
    if ious:
        if loc_aggregate == "mean":
            loc = {"iou": float(np.mean(ious)), "f1": float(np.mean(f1s))}
        else:
            union = pooled_tp + pooled_fp + pooled_fn
            loc = {
                "iou": pooled_tp / union if union else 1.0,
                "f1": 2 * pooled_tp / (2 * pooled_tp + pooled_fp + pooled_fn) if union else 1.0,
            }
        loc.update({"n": len(ious), "aggregate": loc_aggregate})
        report["localization"] = loc
    if rouges:
        explanation = {"rouge_l": float(np.mean(rouges)), "n": len(rouges)}
        if csss:
            explanation["css"] = float(np.mean(csss))
        report["explanation"] = explanation
    return report


def write_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
