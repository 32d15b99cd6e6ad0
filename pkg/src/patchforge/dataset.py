"""Training-ready outputs: paired annotation records and multi-turn VQA samples.

Records and VQA samples are stored as line-delimited JSON with a mandatory
schema version. VQA question/answer strings are frozen template assets;
tests compare them byte-for-byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MissingFieldError
from .grid import ARTIFACT_TYPES

RECORD_SCHEMA_VERSION = 1
VQA_SCHEMA_VERSION = 1

SPLIT_CLEAN = "clean"
SPLIT_ARTIFACT = "artifact"

# frozen VQA template strings
VQA_BINARY_QUESTION = "Does this image contain any visual artifacts?"
VQA_CLEAN_BINARY_ANSWER = "No."
VQA_ARTIFACT_BINARY_ANSWER = "Yes."
VQA_CLEAN_LOCATE_QUESTION = "Locate the {entity}'s {subentity}."
VQA_CLEAN_REGION_QUESTION = "Is there a {entity}'s {subentity} in {bbox}?"
VQA_CLEAN_REGION_ANSWER = "Yes"
VQA_CLEAN_DESCRIBE_QUESTION = "Describe the clean image."
VQA_ARTIFACT_LOCATE_QUESTION = "Provide bounding boxes for all artifact regions."
VQA_ARTIFACT_REGION_QUESTION = "Explain why region {bbox} is an artifact."
VQA_ARTIFACT_DESCRIBE_QUESTION = "Describe all artifacts in the image."


def format_bbox(bbox: tuple[int, int, int, int]) -> str:
    """Pixel bbox as ``[x_min, y_min, x_max, y_max]`` (half-open)."""
    x0, y0, x1, y1 = bbox
    return f"[{x0}, {y0}, {x1}, {y1}]"


def format_bbox_list(bboxes: Iterable[tuple[int, int, int, int]]) -> str:
    return "[" + ", ".join(format_bbox(b) for b in bboxes) + "]"


@dataclass(frozen=True)
class ArtifactRecord:
    """One injected pair with every annotation the pipeline produced."""

    source_image: str
    artifact_image: str
    artifact_type: str
    mapping_path: str
    image_width: int
    image_height: int
    target_bboxes_px: tuple[tuple[int, int, int, int], ...]
    local_explanations: tuple[str, ...]
    global_explanation: str
    caption: str
    seed: dict
    tool_params: dict
    entity_name: str
    subentity_name: str | None = None
    subentity_bbox_px: tuple[int, int, int, int] | None = None
    schema_version: int = field(default=RECORD_SCHEMA_VERSION)

    def __post_init__(self) -> None:
        required = {
            "source_image": self.source_image,
            "artifact_image": self.artifact_image,
            "mapping_path": self.mapping_path,
            "global_explanation": self.global_explanation,
            "caption": self.caption,
            "entity_name": self.entity_name,
            "seed": self.seed,
            "tool_params": self.tool_params,
        }
        for name, value in required.items():
            if not value:
                raise MissingFieldError(f"record field {name!r} is empty")
        if self.artifact_type not in ARTIFACT_TYPES:
            raise MissingFieldError(f"unknown artifact_type {self.artifact_type!r}")
        if not self.target_bboxes_px:
            raise MissingFieldError("record has no target bboxes")
        if len(self.local_explanations) != len(self.target_bboxes_px):
            raise MissingFieldError("local explanations do not align with bboxes")
        if any(not text for text in self.local_explanations):
            raise MissingFieldError("empty local explanation")
        boxes = list(self.target_bboxes_px)
        if self.subentity_bbox_px is not None:
            boxes.append(self.subentity_bbox_px)
        for x0, y0, x1, y1 in boxes:
            if not (0 <= x0 < x1 <= self.image_width and 0 <= y0 < y1 <= self.image_height):
                raise MissingFieldError(
                    f"bbox {(x0, y0, x1, y1)} outside {self.image_width}x{self.image_height}"
                )
        object.__setattr__(self, "target_bboxes_px",
                           tuple(tuple(b) for b in self.target_bboxes_px))
        object.__setattr__(self, "local_explanations", tuple(self.local_explanations))
        if self.subentity_bbox_px is not None:
            object.__setattr__(self, "subentity_bbox_px", tuple(self.subentity_bbox_px))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["target_bboxes_px"] = [list(b) for b in self.target_bboxes_px]
        doc["local_explanations"] = list(self.local_explanations)
        if self.subentity_bbox_px is not None:
            doc["subentity_bbox_px"] = list(self.subentity_bbox_px)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ArtifactRecord":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != RECORD_SCHEMA_VERSION:
            raise MissingFieldError(f"unsupported record schema version {version!r}")
        doc["target_bboxes_px"] = tuple(tuple(b) for b in doc["target_bboxes_px"])
        doc["local_explanations"] = tuple(doc["local_explanations"])
        if doc.get("subentity_bbox_px") is not None:
            doc["subentity_bbox_px"] = tuple(doc["subentity_bbox_px"])
        return cls(**doc)


@dataclass(frozen=True)
class VqaSample:
    image: str
    split: str
    turns: tuple[tuple[str, str], ...]
    schema_version: int = field(default=VQA_SCHEMA_VERSION)

    def __post_init__(self) -> None:
        if self.split not in (SPLIT_CLEAN, SPLIT_ARTIFACT):
            raise ValueError(f"unknown split {self.split!r}")
        object.__setattr__(self, "turns", tuple((q, a) for q, a in self.turns))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "image": self.image,
            "split": self.split,
            "turns": [{"question": q, "answer": a} for q, a in self.turns],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VqaSample":
        return cls(
            image=doc["image"],
            split=doc["split"],
            turns=tuple((t["question"], t["answer"]) for t in doc["turns"]),
            schema_version=doc["schema_version"],
        )


def emit_vqa_clean(record: ArtifactRecord) -> VqaSample:
    """Conversation over the clean image.

    Four turns when the record carries a grounded subentity (binary, locate,
    region presence, describe); binary and describe otherwise.
    """
    turns: list[tuple[str, str]] = [(VQA_BINARY_QUESTION, VQA_CLEAN_BINARY_ANSWER)]
    if record.subentity_name is not None and record.subentity_bbox_px is not None:
        bbox = format_bbox(record.subentity_bbox_px)
        turns.append((
            VQA_CLEAN_LOCATE_QUESTION.format(entity=record.entity_name,
                                             subentity=record.subentity_name),
            bbox,
        ))
        turns.append((
            VQA_CLEAN_REGION_QUESTION.format(entity=record.entity_name,
                                             subentity=record.subentity_name,
                                             bbox=bbox),
            VQA_CLEAN_REGION_ANSWER,
        ))
    turns.append((VQA_CLEAN_DESCRIBE_QUESTION, record.caption))
    return VqaSample(image=record.source_image, split=SPLIT_CLEAN, turns=tuple(turns))


def emit_vqa_artifact(record: ArtifactRecord) -> VqaSample:
    """Conversation over the artifact image: binary, bbox list, one
    explanation turn per bbox, then the global explanation."""
    turns: list[tuple[str, str]] = [(VQA_BINARY_QUESTION, VQA_ARTIFACT_BINARY_ANSWER)]
    turns.append((VQA_ARTIFACT_LOCATE_QUESTION, format_bbox_list(record.target_bboxes_px)))
    for bbox, text in zip(record.target_bboxes_px, record.local_explanations):
        turns.append((VQA_ARTIFACT_REGION_QUESTION.format(bbox=format_bbox(bbox)), text))
    turns.append((VQA_ARTIFACT_DESCRIBE_QUESTION, record.global_explanation))
    return VqaSample(image=record.artifact_image, split=SPLIT_ARTIFACT, turns=tuple(turns))


# ---------------------------------------------------------------------------
# line-delimited storage


class JsonlWriter:
    """Append-only single-writer stream of JSON documents."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, doc: dict) -> None:
        self._fh.write(json.dumps(doc, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_records(path: str | Path) -> list[ArtifactRecord]:
    return [ArtifactRecord.from_dict(doc) for doc in read_jsonl(path)]


def read_vqa(path: str | Path) -> list[VqaSample]:
    return [VqaSample.from_dict(doc) for doc in read_jsonl(path)]
