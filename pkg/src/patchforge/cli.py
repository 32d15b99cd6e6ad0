"""Command-line interface.

Subcommands mirror the pipeline stages (perceive, synthesize, inject,
curate, emit), plus ``run`` for the whole chain, ``evaluate`` for the
benchmark harness, and ``overlay`` for mapping visualizations. Structured
log events go to stderr, one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, imageio, injection, pipeline, toolbox
from .client import HttpEmbeddingClient
from .config import load_config
from .dataset import read_jsonl
from .errors import ConfigError, PatchForgeError


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PatchForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchforge",
                                     description="artifact-injection data pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("perceive", "ground masks into scenes"),
        ("synthesize", "produce target-reference mappings"),
        ("inject", "render artifact images and verify the injection math"),
        ("curate", "filter pairs and generate explanations"),
        ("emit", "write records and VQA samples"),
        ("run", "full pipeline"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.set_defaults(func=_stage_command(name))

    ev = sub.add_parser("evaluate", help="score predictions against a benchmark")
    ev.add_argument("--ground-truth", required=True, help="benchmark manifest (JSONL)")
    ev.add_argument("--predictions", required=True, help="predictions file (JSONL)")
    ev.add_argument("--output", required=True, help="report path (JSON)")
    ev.add_argument("--heat-threshold", type=float, default=0.5)
    ev.add_argument("--loc-aggregate", choices=("mean", "micro"), default="mean")
    ev.add_argument("--embedder-endpoint", help="optional embedding endpoint for CSS")
    ev.add_argument("--embedder-model", default="default")
    ev.set_defaults(func=cmd_evaluate)

    ov = sub.add_parser("overlay", help="draw target/reference patch outlines")
    ov.add_argument("--records", help="records.jsonl produced by emit")
    ov.add_argument("--index", type=int, default=0, help="record line index")
    ov.add_argument("--root", help="directory records paths are relative to "
                                   "(defaults to the records file's directory)")
    ov.add_argument("--mapping", help="mapping export (alternative to --records)")
    ov.add_argument("--image", help="image to draw on (with --mapping)")
    ov.add_argument("--output", required=True, help="overlay PNG path")
    ov.set_defaults(func=cmd_overlay)

    return parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--output-dir", help="override the output directory")
    p.add_argument("--manifest", help="override the input manifest")
    p.add_argument("--parallelism", type=int, help="override the in-flight cap")


def _load(args) -> "pipeline.PipelineConfig":
    overrides = {
        "seed": args.seed,
        # flag paths resolve against the caller's cwd, not the config file
        "output_dir": str(Path(args.output_dir).absolute()) if args.output_dir else None,
        "manifest": str(Path(args.manifest).absolute()) if args.manifest else None,
        "parallelism": args.parallelism,
    }
    return load_config(args.config, overrides)


def _stage_command(name: str):
    def run(args) -> int:
        config = _load(args)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        if name == "run":
            summary = pipeline.run_pipeline(config)
            print(json.dumps(summary.to_dict(), sort_keys=True))
            return 0 if summary.images_processed > 0 else 1
        if name == "perceive":
            scenes = pipeline.stage_perceive(config)
            print(json.dumps({"scenes": len(scenes)}))
            return 0 if scenes else 1
        if name == "synthesize":
            outcome = pipeline.stage_synthesize(config)
            print(json.dumps({"attempted": outcome.attempted, "mapped": len(outcome.plans),
                              "failed": outcome.failed}, sort_keys=True))
            return 0
        if name == "inject":
            flags = pipeline.stage_inject(config)
            print(json.dumps({"rendered": flags.count(True), "failed": flags.count(False)},
                             sort_keys=True))
            return 0
        if name == "curate":
            docs = pipeline.stage_curate(config)
            kept = sum(1 for d in docs if d["decision"] == "keep")
            print(json.dumps({"curated": len(docs), "kept": kept}, sort_keys=True))
            return 0
        records, failed = pipeline.stage_emit(config)
        print(json.dumps({"emitted": len(records), "failed": failed}, sort_keys=True))
        return 0

    return run


def cmd_evaluate(args) -> int:
    gt = list(read_jsonl(args.ground_truth))
    preds = list(read_jsonl(args.predictions))
    embedder = None
    if args.embedder_endpoint:
        embedder = HttpEmbeddingClient(endpoint=args.embedder_endpoint,
                                       model=args.embedder_model)
    report = evaluation.evaluate_benchmark(gt, preds, heat_threshold=args.heat_threshold,
                                           loc_aggregate=args.loc_aggregate,
                                           embedder=embedder)
    evaluation.write_report(report, args.output)
    aggregate = {k: v for k, v in report.items() if k != "per_sample"}
    print(json.dumps(aggregate, sort_keys=True))
    return 0


def cmd_overlay(args) -> int:
    if args.mapping:
        if not args.image:
            print("--image is required with --mapping", file=sys.stderr)
            return 2
        mapping = toolbox.mapping_from_dict(toolbox.load_mapping(args.mapping))
        image = imageio.load_rgb(args.image)
    elif args.records:
        root = Path(args.root) if args.root else Path(args.records).parent
        docs = list(read_jsonl(args.records))
        if not 0 <= args.index < len(docs):
            print(f"record index {args.index} out of range", file=sys.stderr)
            return 2
        doc = docs[args.index]
        mapping = toolbox.mapping_from_dict(toolbox.load_mapping(root / doc["mapping_path"]))
        image = imageio.load_rgb(root / doc["artifact_image"])
    else:
        print("pass --records or --mapping", file=sys.stderr)
        return 2
    overlay = injection.render_overlay(image, mapping, mapping.grid)
    imageio.save_rgb(overlay, args.output)
    print(json.dumps({"overlay": args.output, "pairs": len(mapping.pairs)}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
