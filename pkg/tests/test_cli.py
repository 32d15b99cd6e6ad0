import json

import pytest

from patchforge import imageio
from patchforge.cli import main

from conftest import build_corpus, write_config


@pytest.fixture()
def cli_setup(tmp_path):
    manifest = build_corpus(tmp_path / "corpus", n_images=3)
    config = write_config(tmp_path / "config.json", manifest, tmp_path / "out")
    return config, tmp_path / "out"


def test_run_subcommand(cli_setup, capsys):
    config, out = cli_setup
    assert main(["run", "--config", str(config)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["emitted"] == 4
    assert (out / "records.jsonl").is_file()


def test_stage_subcommands_chain(cli_setup, capsys):
    config, out = cli_setup
    for stage in ("perceive", "synthesize", "inject", "curate", "emit"):
        assert main([stage, "--config", str(config)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert json.loads(lines[-1])["emitted"] == 4
    assert (out / "vqa_clean.jsonl").is_file()


def test_flag_overrides_apply(cli_setup, capsys):
    config, out = cli_setup
    alt = out.parent / "alt_out"
    assert main(["run", "--config", str(config), "--seed", "11",
                 "--output-dir", str(alt)]) == 0
    assert (alt / "summary.json").is_file()


def test_invalid_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["run", "--config", str(bad)]) == 2


def test_zero_images_exits_nonzero(tmp_path, capsys):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    (corpus / "manifest.json").write_text(json.dumps({"images": []}))
    (corpus / "vocabulary.json").write_text("{}")
    config = write_config(tmp_path / "c.json", corpus / "manifest.json", tmp_path / "out")
    assert main(["run", "--config", str(config)]) == 1


def test_overlay_from_records(cli_setup, capsys):
    config, out = cli_setup
    main(["run", "--config", str(config)])
    capsys.readouterr()
    overlay_path = out.parent / "overlay.png"
    assert main(["overlay", "--records", str(out / "records.jsonl"), "--index", "0",
                 "--output", str(overlay_path)]) == 0
    overlay = imageio.load_rgb(overlay_path)
    artifact = imageio.load_rgb(out / "images" / "scene_000__add.png")
    assert overlay.shape == artifact.shape
    assert (overlay != artifact).any()


def test_overlay_from_mapping(cli_setup, capsys):
    config, out = cli_setup
    main(["run", "--config", str(config)])
    capsys.readouterr()
    overlay_path = out.parent / "overlay2.png"
    assert main(["overlay",
                 "--mapping", str(out / "mappings" / "scene_001__distort.json"),
                 "--image", str(config.parent / "corpus" / "scene_001.png"),
                 "--output", str(overlay_path)]) == 0
    assert overlay_path.is_file()


def test_evaluate_subcommand(tmp_path, capsys):
    gt = tmp_path / "gt.jsonl"
    preds = tmp_path / "preds.jsonl"
    gt.write_text(json.dumps({
        "image": "a.png", "label": "yes", "width": 8, "height": 8,
        "bboxes": [[0, 0, 2, 2]], "explanation": "the cat sat",
    }) + "\n" + json.dumps({
        "image": "b.png", "label": "no", "width": 8, "height": 8,
        "bboxes": [], "explanation": "",
    }) + "\n")
    preds.write_text(json.dumps({
        "image": "a.png", "label": "yes",
        "regions": [{"kind": "bbox", "payload": [1, 1, 3, 3]}],
        "explanation": "the dog sat",
    }) + "\n" + json.dumps({
        "image": "b.png", "label": "no", "regions": [], "explanation": "",
    }) + "\n")
    report_path = tmp_path / "report.json"
    assert main(["evaluate", "--ground-truth", str(gt), "--predictions", str(preds),
                 "--output", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert report["binary"]["accuracy"] == 1.0
    assert abs(report["localization"]["iou"] - 1 / 7) < 1e-12
    assert abs(report["explanation"]["rouge_l"] - 2 / 3) < 1e-12
    printed = json.loads(capsys.readouterr().out)
    assert "per_sample" not in printed


def test_cli_determinism_across_invocations(tmp_path, capsys):
    manifest = build_corpus(tmp_path / "corpus", n_images=3)
    cfg_a = write_config(tmp_path / "a.json", manifest, tmp_path / "out_a")
    cfg_b = write_config(tmp_path / "b.json", manifest, tmp_path / "out_b")
    main(["run", "--config", str(cfg_a)])
    main(["run", "--config", str(cfg_b)])
    files_a = sorted(p.relative_to(tmp_path / "out_a") for p in (tmp_path / "out_a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "out_b") for p in (tmp_path / "out_b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "out_a" / rel).read_bytes() == (tmp_path / "out_b" / rel).read_bytes()
