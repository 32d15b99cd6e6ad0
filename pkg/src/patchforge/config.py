"""Pipeline configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .curation import FilterThresholds
from .errors import ConfigError
from .grid import Tool
from .injection import InjectionSchedule
from .toolbox import AddParams, DistortParams, FuseParams, RemoveParams

TOOL_ORDER = (Tool.ADD, Tool.REMOVE, Tool.DISTORT, Tool.FUSE)
DISTORT_KERNEL_CHOICES = ("shuffle", "jitter", "strip", "random")


@dataclass
class PipelineConfig:
    manifest: Path
    output_dir: Path
    vocabulary: Path
    seed: int = 0
    parallelism: int = 1
    patch_fg_threshold: float = 0.5
    containment_threshold: float = 0.5
    tools_enabled: tuple[str, ...] = tuple(t.value for t in TOOL_ORDER)
    add: AddParams = field(default_factory=AddParams)
    remove: RemoveParams = field(default_factory=RemoveParams)
    distort: DistortParams = field(default_factory=DistortParams)
    distort_kernel: str = "random"
    fuse: FuseParams = field(default_factory=FuseParams)
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    schedule: InjectionSchedule = field(default_factory=InjectionSchedule)
    client: dict = field(default_factory=lambda: {"kind": "mock"})
    blend: int = 0
    verifier_dim: int = 16
    record_transcript: bool = False

    def __post_init__(self) -> None:
        self.manifest = Path(self.manifest)
        self.output_dir = Path(self.output_dir)
        self.vocabulary = Path(self.vocabulary)
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.blend < 0:
            raise ConfigError("blend must be >= 0")
        if self.distort_kernel not in DISTORT_KERNEL_CHOICES:
            raise ConfigError(f"unknown distort kernel {self.distort_kernel!r}")
        unknown = set(self.tools_enabled) - {t.value for t in TOOL_ORDER}
        if unknown:
            raise ConfigError(f"unknown tools enabled: {sorted(unknown)}")
        for path, what in ((self.manifest, "manifest"), (self.vocabulary, "vocabulary")):
            if not path.is_file():
                raise ConfigError(f"{what} file not found: {path}")

    def tool_params(self, tool: Tool):
        return {
            Tool.ADD: self.add,
            Tool.REMOVE: self.remove,
            Tool.DISTORT: self.distort,
            Tool.FUSE: self.fuse,
        }[tool]


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse the config file, apply flat overrides, validate everything."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    base = path.parent

    def _resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    try:
        tools = raw.get("tools", {})
        distort_raw, distort_kernel = _split_kernel(tools.get("distort", {}))
        return PipelineConfig(
            manifest=_resolve(raw["manifest"]),
            output_dir=_resolve(raw["output_dir"]),
            vocabulary=_resolve(raw["vocabulary"]),
            seed=raw.get("seed", 0),
            parallelism=raw.get("parallelism", 1),
            patch_fg_threshold=raw.get("patch_fg_threshold", 0.5),
            containment_threshold=raw.get("containment_threshold", 0.5),
            tools_enabled=tuple(tools.get("enabled", [t.value for t in TOOL_ORDER])),
            add=AddParams(**tools.get("add", {})),
            remove=RemoveParams(**tools.get("remove", {})),
            distort=DistortParams(**distort_raw),
            distort_kernel=distort_kernel,
            fuse=FuseParams(**tools.get("fuse", {})),
            thresholds=FilterThresholds(**raw.get("thresholds", {})),
            schedule=InjectionSchedule.from_dict(raw["schedule"]) if "schedule" in raw
            else InjectionSchedule(),
            client=raw.get("client", {"kind": "mock"}),
            blend=raw.get("blend", 0),
            verifier_dim=raw.get("verifier_dim", 16),
            record_transcript=raw.get("record_transcript", False),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _split_kernel(distort_raw: dict) -> tuple[dict, str]:
    """The config-level kernel may be "random"; DistortParams holds a concrete one."""
    raw = dict(distort_raw)
    kernel = raw.pop("kernel", "random")
    if kernel != "random":
        raw["kernel"] = kernel
    return raw, kernel
