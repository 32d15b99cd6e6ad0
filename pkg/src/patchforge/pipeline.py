"""End-to-end orchestration: perceive, synthesize, inject, curate, emit.

Each stage reads the previous stage's files and writes its own, so stages
can run standalone from the CLI; ``run_pipeline`` chains them. Per-image
work is isolated: one failing image or injection never aborts the run.
All stochastic choices draw from per-image, per-tool substreams of the
global seed, so outputs are byte-identical across runs and independent of
processing order.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import curation, imageio, injection, perception, toolbox
from .client import RecordingVlmClient, VlmClient, client_from_config
from .config import TOOL_ORDER, PipelineConfig
from .dataset import ArtifactRecord, JsonlWriter, emit_vqa_artifact, emit_vqa_clean
from .errors import PatchForgeError
from .grid import PatchGrid, PatchMapping, Tool, from_linear, patch_set_bbox_px, to_linear
from .seeding import seed_spec, substream

logger = logging.getLogger(__name__)

SCENE_SCHEMA_VERSION = 1
PLAN_SCHEMA_VERSION = 1
CURATION_SCHEMA_VERSION = 1


def log_event(stage: str, image: str, decision: str, reason: str = "", **extra) -> None:
    """One structured log line per pipeline event."""
    payload = {"stage": stage, "image": image, "decision": decision, "reason": reason}
    payload.update(extra)
    logger.info(json.dumps(payload, sort_keys=True))


@dataclass
class RunSummary:
    attempted: int = 0
    injected: int = 0
    failed: int = 0
    filtered_by_metric: int = 0
    filtered_by_vlm: int = 0
    emitted: int = 0
    images_processed: int = 0
    images_failed: int = 0

    def consistent(self) -> bool:
        return (
            self.attempted == self.injected + self.failed
            and self.injected == self.emitted + self.filtered_by_metric + self.filtered_by_vlm
        )

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "injected": self.injected,
            "failed": self.failed,
            "filtered_by_metric": self.filtered_by_metric,
            "filtered_by_vlm": self.filtered_by_vlm,
            "emitted": self.emitted,
            "images_processed": self.images_processed,
            "images_failed": self.images_failed,
        }


def _write_json(doc: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def _map_ordered(fn, items, parallelism: int):
    """Apply fn to items, optionally with threads; results keep input order."""
    if parallelism <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def load_manifest_entries(config: PipelineConfig) -> list[tuple[str, Path]]:
    """(image_id, per-image manifest path) in manifest order; ids must be unique."""
    doc = _read_json(config.manifest)
    base = config.manifest.parent
    entries = []
    seen = set()
    for item in doc["images"]:
        path = base / item
        image_id = Path(item).stem
        if image_id in seen:
            raise PatchForgeError(f"duplicate image id {image_id!r} in manifest")
        seen.add(image_id)
        entries.append((image_id, path))
    return entries


# ---------------------------------------------------------------------------
# stage 1: perceive


def stage_perceive(config: PipelineConfig) -> list[dict]:
    """Ground every manifest image; writes ``scenes/<id>.json`` per image."""
    vocab = perception.load_vocabulary(config.vocabulary)
    entries = load_manifest_entries(config)

    def work(entry):
        image_id, manifest_path = entry
        try:
            manifest = perception.load_scene_manifest(manifest_path)
            scene, image = perception.scene_from_manifest(
                manifest, manifest_path.parent, vocab,
                patch_fg_threshold=config.patch_fg_threshold,
                containment_threshold=config.containment_threshold,
            )
        except (PatchForgeError, ValueError, OSError, KeyError) as exc:
            log_event("perceive", image_id, "failed", str(exc))
            return None
        doc = _scene_to_doc(image_id, manifest, scene)
        _write_json(doc, config.output_dir / "scenes" / f"{image_id}.json")
        log_event("perceive", image_id, "grounded",
                  entities=len(doc["entities"]), subentities=len(doc["subentities"]))
        return doc

    return [doc for doc in _map_ordered(work, entries, config.parallelism) if doc]


def _scene_to_doc(image_id: str, manifest: dict, scene: perception.GroundedScene) -> dict:
    grid = scene.grid
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "image_id": image_id,
        "image": manifest["image"],
        "caption": scene.caption,
        "grid": {"h_p": grid.h_p, "w_p": grid.w_p, "patch_px": grid.patch_px},
        "entities": [
            {"label": e.label, "patches": sorted(to_linear(c, grid) for c in e.patch_set)}
            for e in scene.entities
        ],
        "subentities": [
            {
                "label": s.instance.label,
                "parent": s.parent_index,
                "level": s.level,
                "ratio": s.ratio,
                "patches": sorted(to_linear(c, grid) for c in s.instance.patch_set),
            }
            for s in scene.subentities
        ],
    }


def load_scenes(config: PipelineConfig) -> list[dict]:
    scenes = []
    for image_id, _ in load_manifest_entries(config):
        path = config.output_dir / "scenes" / f"{image_id}.json"
        if path.is_file():
            scenes.append(_read_json(path))
    return scenes


# ---------------------------------------------------------------------------
# stage 2: synthesize


@dataclass
class PlanOutcome:
    plans: list[dict] = field(default_factory=list)
    attempted: int = 0
    failed: int = 0


def stage_synthesize(config: PipelineConfig, scenes: list[dict] | None = None) -> PlanOutcome:
    """Pick one candidate per enabled tool per image and run the tool.

    Writes the mapping export (``mappings/``) and a plan sidecar
    (``plans/``) per successful invocation.
    """
    if scenes is None:
        scenes = load_scenes(config)
    order = {image_id: i for i, (image_id, _) in enumerate(load_manifest_entries(config))}
    outcome = PlanOutcome()

    def work(scene):
        return _synthesize_scene(config, scene, order[scene["image_id"]])

    for plans, attempted, failed in _map_ordered(work, scenes, config.parallelism):
        outcome.plans.extend(plans)
        outcome.attempted += attempted
        outcome.failed += failed
    return outcome


def _synthesize_scene(config: PipelineConfig, scene: dict, image_index: int):
    grid = PatchGrid(**scene["grid"])
    image_id = scene["image_id"]
    ents = [
        (e["label"], frozenset(from_linear(i, grid) for i in e["patches"]))
        for e in scene["entities"]
    ]
    subs = [
        {
            "label": s["label"],
            "parent": s["parent"],
            "level": s["level"],
            "patches": frozenset(from_linear(i, grid) for i in s["patches"]),
        }
        for s in scene["subentities"]
    ]

    peripheral = [i for i, s in enumerate(subs) if s["level"] == perception.LEVEL_PERIPHERAL]
    intermediate = [i for i, s in enumerate(subs) if s["level"] == perception.LEVEL_INTERMEDIATE]
    overlapping_pairs = [
        (i, j)
        for i in range(len(ents))
        for j in range(i + 1, len(ents))
        if ents[i][1] & ents[j][1]
    ]
    candidates = {
        Tool.ADD: peripheral,
        Tool.REMOVE: peripheral,
        Tool.DISTORT: intermediate,
        Tool.FUSE: overlapping_pairs,
    }

    plans, attempted, failed = [], 0, 0
    for tool_index, tool in enumerate(TOOL_ORDER):
        if tool.value not in config.tools_enabled or not candidates[tool]:
            continue
        attempted += 1
        rng = substream(config.seed, image_index, tool_index)
        pick = candidates[tool][int(rng.integers(len(candidates[tool])))]
        try:
            mapping, params_doc, context = _run_tool(config, tool, pick, ents, subs, grid, rng)
        except PatchForgeError as exc:
            failed += 1
            log_event("synthesize", image_id, "failed", str(exc), tool=tool.value)
            continue
        if not mapping.pairs:
            failed += 1
            log_event("synthesize", image_id, "failed", "empty mapping", tool=tool.value)
            continue
        seed = seed_spec(config.seed, image_index, tool_index)
        mapping_rel = f"mappings/{image_id}__{tool.value}.json"
        mapping_doc = toolbox.mapping_to_dict(mapping, seed=seed,
                                              schedule=config.schedule.to_dict())
        toolbox.save_mapping(mapping_doc, config.output_dir / mapping_rel)
        plan = {
            "schema_version": PLAN_SCHEMA_VERSION,
            "image_id": image_id,
            "image": scene["image"],
            "caption": scene["caption"],
            "tool": tool.value,
            "artifact_type": tool.artifact_type,
            "mapping_file": mapping_rel,
            "artifact_file": f"images/{image_id}__{tool.value}.png",
            "params": params_doc,
            "seed": seed,
            **context,
        }
        _write_json(plan, config.output_dir / "plans" / f"{image_id}__{tool.value}.json")
        log_event("synthesize", image_id, "mapped", tool=tool.value, pairs=len(mapping.pairs))
        plans.append(plan)
    return plans, attempted, failed


def _run_tool(config: PipelineConfig, tool: Tool, pick, ents, subs, grid: PatchGrid, rng):
    """Returns (mapping, params snapshot, record context)."""
    if tool is Tool.FUSE:
        i, j = pick
        params = config.fuse
        mapping = toolbox.fuse_tool(ents[i][1], ents[j][1], params, grid, rng)
        context = {
            "entity_name": ents[i][0],
            "entity_b_name": ents[j][0],
            "subentity_name": None,
            "subentity_bbox_px": None,
        }
        return mapping, _params_dict(params), context

    sub = subs[pick]
    parent_label, parent_patches = ents[sub["parent"]]
    same_label_others = frozenset().union(
        *[s["patches"] for k, s in enumerate(subs) if k != pick and s["label"] == sub["label"]]
    ) if len(subs) > 1 else frozenset()
    context = {
        "entity_name": parent_label,
        "entity_b_name": None,
        "subentity_name": sub["label"],
        "subentity_bbox_px": list(patch_set_bbox_px(sub["patches"], grid)),
    }
    if tool is Tool.ADD:
        params = config.add
        mapping = toolbox.add_tool(sub["patches"], parent_patches, same_label_others, params, grid)
        return mapping, _params_dict(params), context
    if tool is Tool.REMOVE:
        params = config.remove
        mapping = toolbox.remove_tool(sub["patches"], parent_patches, same_label_others, params, grid)
        return mapping, _params_dict(params), context
    params = config.distort
    if config.distort_kernel == "random":
        kernel = toolbox.DISTORT_KERNELS[int(rng.integers(len(toolbox.DISTORT_KERNELS)))]
        params = toolbox.DistortParams(kernel=kernel, sigma=params.sigma,
                                       strips=params.strips, max_attempts=params.max_attempts)
    mapping = toolbox.distort_tool(sub["patches"], parent_patches, params, grid, rng)
    return mapping, _params_dict(params), context


def _params_dict(params) -> dict:
    from dataclasses import asdict

    return asdict(params)


def load_plans(config: PipelineConfig) -> list[dict]:
    plans = []
    for image_id, _ in load_manifest_entries(config):
        for tool in TOOL_ORDER:
            path = config.output_dir / "plans" / f"{image_id}__{tool.value}.json"
            if path.is_file():
                plans.append(_read_json(path))
    return plans


def _plan_mapping(config: PipelineConfig, plan: dict) -> PatchMapping:
    return toolbox.mapping_from_dict(toolbox.load_mapping(config.output_dir / plan["mapping_file"]))


def _plan_source_image(config: PipelineConfig, plan: dict):
    return imageio.load_rgb(config.manifest.parent / plan["image"])


# ---------------------------------------------------------------------------
# stage 3: inject


def stage_inject(config: PipelineConfig, plans: list[dict] | None = None) -> list[bool]:
    """Render each mapping with the pixel oracle and numerically verify the
    attention-injection contract. Returns per-plan success flags."""
    if plans is None:
        plans = load_plans(config)

    def work(plan):
        image_id = plan["image_id"]
        try:
            mapping = _plan_mapping(config, plan)
            image = _plan_source_image(config, plan)
            artifact = injection.render_pixel_oracle(image, mapping, mapping.grid,
                                                     blend=config.blend)
            imageio.save_rgb(artifact, config.output_dir / plan["artifact_file"])
            checks = injection.verify_mapping_numerics(mapping, dim=config.verifier_dim,
                                                       seed=config.seed)
        except (PatchForgeError, ValueError, OSError) as exc:
            log_event("inject", image_id, "failed", str(exc), tool=plan["tool"])
            return False
        log_event("inject", image_id, "rendered", tool=plan["tool"], **checks)
        return True

    return _map_ordered(work, plans, config.parallelism)


# ---------------------------------------------------------------------------
# stage 4: curate


def stage_curate(config: PipelineConfig, plans: list[dict] | None = None,
                 client: VlmClient | None = None,
                 perceptual_distance=None) -> list[dict]:
    """Filter each rendered pair and generate explanations for the keepers.

    ``perceptual_distance(original_crop, artifact_crop, patch_px)`` is
    pluggable (e.g. :class:`patchforge.client.RemotePerceptualScorer`);
    the default is the local per-patch RMS distance.
    """
    if plans is None:
        plans = load_plans(config)
    if client is None:
        client = client_from_config(config.client)
    if config.record_transcript:
        client = RecordingVlmClient(client, config.output_dir / "transcripts" / "client.jsonl")
    if perceptual_distance is None:
        perceptual_distance = curation.patch_rms_distance

    def work(plan):
        image_id = plan["image_id"]
        try:
            doc = _curate_plan(config, plan, client, perceptual_distance)
        except (PatchForgeError, ValueError, OSError) as exc:
            log_event("curate", image_id, "failed", str(exc), tool=plan["tool"])
            doc = {
                "schema_version": CURATION_SCHEMA_VERSION,
                "image_id": image_id,
                "tool": plan["tool"],
                "decision": "error",
                "reason": str(exc),
                "filter_kind": None,
                "distance": None,
                "local_explanations": [],
                "global_explanation": None,
            }
        _write_json(doc, config.output_dir / "curation" / f"{image_id}__{plan['tool']}.json")
        return doc

    return _map_ordered(work, plans, config.parallelism)


def _curate_plan(config: PipelineConfig, plan: dict, client: VlmClient,
                 perceptual_distance) -> dict:
    image_id = plan["image_id"]
    mapping = _plan_mapping(config, plan)
    original = _plan_source_image(config, plan)
    artifact = imageio.load_rgb(config.output_dir / plan["artifact_file"])
    bbox = mapping.target_bbox_px()
    triplet = curation.build_triplet(original, artifact, bbox, plan["entity_name"])

    artifact_type = plan["artifact_type"]
    if artifact_type in curation.METRIC_FILTERED_TYPES:
        distance = perceptual_distance(
            triplet.cropped_original, triplet.cropped_artifact, mapping.grid.patch_px
        )
        decision = curation.metric_gate(distance, config.thresholds)
        filter_kind = "metric"
    else:
        distance = None
        decision = curation.vlm_filter(triplet, artifact_type, client)
        filter_kind = "vlm"

    doc = {
        "schema_version": CURATION_SCHEMA_VERSION,
        "image_id": image_id,
        "tool": plan["tool"],
        "decision": "keep" if decision.keep else "reject",
        "reason": decision.reason,
        "filter_kind": filter_kind,
        "distance": distance,
        "local_explanations": [],
        "global_explanation": None,
    }
    if decision.keep:
        local = curation.local_explanation(triplet, artifact_type, client)
        locals_ = [(bbox, local)]
        doc["local_explanations"] = [[list(b), t] for b, t in locals_]
        doc["global_explanation"] = curation.global_explanation(artifact, locals_, client)
        log_event("curate", image_id, "keep", tool=plan["tool"], filter=filter_kind)
    else:
        log_event("curate", image_id, "reject", decision.reason or "", tool=plan["tool"],
                  filter=filter_kind)
    return doc


def load_curations(config: PipelineConfig, plans: list[dict]) -> list[dict]:
    docs = []
    for plan in plans:
        path = config.output_dir / "curation" / f"{plan['image_id']}__{plan['tool']}.json"
        docs.append(_read_json(path) if path.is_file() else None)
    return docs


# ---------------------------------------------------------------------------
# stage 5: emit


def stage_emit(config: PipelineConfig, plans: list[dict] | None = None,
               curations: list[dict] | None = None):
    """Assemble records for curated keepers and write the three output streams.

    Returns (records, failed_count).
    """
    if plans is None:
        plans = load_plans(config)
    if curations is None:
        curations = load_curations(config, plans)

    records = []
    failed = 0
    records_path = config.output_dir / "records.jsonl"
    clean_path = config.output_dir / "vqa_clean.jsonl"
    artifact_path = config.output_dir / "vqa_artifact.jsonl"
    for path in (records_path, clean_path, artifact_path):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.unlink(missing_ok=True)
    with JsonlWriter(records_path) as rec_w, JsonlWriter(clean_path) as clean_w, \
            JsonlWriter(artifact_path) as art_w:
        for plan, cur in zip(plans, curations):
            if cur is None or cur["decision"] == "error":
                failed += 1
                continue
            if cur["decision"] != "keep":
                continue
            try:
                record = _record_from_plan(config, plan, cur)
            except PatchForgeError as exc:
                failed += 1
                log_event("emit", plan["image_id"], "failed", str(exc), tool=plan["tool"])
                continue
            rec_w.write(record.to_dict())
            clean_w.write(emit_vqa_clean(record).to_dict())
            art_w.write(emit_vqa_artifact(record).to_dict())
            log_event("emit", plan["image_id"], "emitted", tool=plan["tool"])
            records.append(record)
    return records, failed


def _record_from_plan(config: PipelineConfig, plan: dict, cur: dict) -> ArtifactRecord:
    mapping_doc = toolbox.load_mapping(config.output_dir / plan["mapping_file"])
    grid = PatchGrid(**mapping_doc["grid"])
    return ArtifactRecord(
        source_image=plan["image"],
        artifact_image=plan["artifact_file"],
        artifact_type=plan["artifact_type"],
        mapping_path=plan["mapping_file"],
        image_width=grid.width_px,
        image_height=grid.height_px,
        target_bboxes_px=tuple(tuple(bbox) for bbox, _ in cur["local_explanations"]),
        local_explanations=tuple(text for _, text in cur["local_explanations"]),
        global_explanation=cur["global_explanation"] or "",
        caption=plan["caption"],
        seed=plan["seed"],
        tool_params=plan["params"],
        entity_name=plan["entity_name"],
        subentity_name=plan["subentity_name"],
        subentity_bbox_px=tuple(plan["subentity_bbox_px"]) if plan["subentity_bbox_px"] else None,
    )


# ---------------------------------------------------------------------------
# full run


def run_pipeline(config: PipelineConfig, client: VlmClient | None = None,
                 perceptual_distance=None) -> RunSummary:
    """All stages in order; the summary satisfies
    attempted = injected + failed and injected = emitted + filtered."""
    config.output_dir.mkdir(parents=True, exist_ok=True)
    summary = RunSummary()

    scenes = stage_perceive(config)
    total_images = len(load_manifest_entries(config))
    summary.images_processed = len(scenes)
    summary.images_failed = total_images - len(scenes)

    outcome = stage_synthesize(config, scenes)
    summary.attempted = outcome.attempted
    summary.failed = outcome.failed

    render_ok = stage_inject(config, outcome.plans)
    summary.failed += render_ok.count(False)
    rendered_plans = [plan for plan, ok in zip(outcome.plans, render_ok) if ok]
    summary.injected = len(rendered_plans)

    curations = stage_curate(config, rendered_plans, client, perceptual_distance)
    for cur in curations:
        if cur["decision"] == "reject":
            if cur["filter_kind"] == "metric":
                summary.filtered_by_metric += 1
            else:
                summary.filtered_by_vlm += 1

    records, emit_failed = stage_emit(config, rendered_plans, curations)
    # curation errors and emit errors pull the affected pair out of "injected"
    summary.injected -= emit_failed
    summary.failed += emit_failed
    summary.emitted = len(records)

    _write_json(summary.to_dict(), config.output_dir / "summary.json")
    log_event("run", "-", "done", **summary.to_dict())
    return summary
