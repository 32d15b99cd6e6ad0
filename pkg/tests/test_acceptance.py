"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Tolerances are pinned here and nowhere else. Criterion 1's clock starts
after kernel warmup so it measures the checks, not JIT compilation.
"""

import time

import numpy as np
import pytest

from patchforge import _kernels
from patchforge.config import load_config
from patchforge.curation import FilterThresholds, metric_gate
from patchforge.dataset import (
    VQA_ARTIFACT_BINARY_ANSWER,
    VQA_ARTIFACT_DESCRIBE_QUESTION,
    VQA_ARTIFACT_LOCATE_QUESTION,
    VQA_ARTIFACT_REGION_QUESTION,
    VQA_BINARY_QUESTION,
    VQA_CLEAN_BINARY_ANSWER,
    VQA_CLEAN_DESCRIBE_QUESTION,
    VQA_CLEAN_LOCATE_QUESTION,
    VQA_CLEAN_REGION_QUESTION,
    ArtifactRecord,
    read_jsonl,
    read_records,
)
from patchforge.evaluation import (
    RegionAnnotation,
    localization_metrics,
    rasterize,
    rouge_l,
)
from patchforge.grid import PatchGrid, PatchMapping, Tool
from patchforge.injection import (
    InjectionSchedule,
    ToyAttentionLayer,
    attention_injection_pass,
    attention_inversion_pass,
    render_pixel_oracle,
    rope_apply,
    schedule_gates,
)
from patchforge.pipeline import run_pipeline
from patchforge.toolbox import (
    AddParams,
    DistortParams,
    FuseParams,
    RemoveParams,
    add_tool,
    best_offset,
    distort_tool,
    farthest_point_sampling,
    fuse_tool,
    remove_tool,
)
from patchforge.errors import NoCandidateError, NoReferenceError

import oracles
from conftest import build_corpus, write_config


def _report(number: int, description: str) -> None:
    print(f"ACCEPTANCE {number}: PASS — {description}")


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    _kernels.warmup()


def _random_grid(rng, lo=2, hi=12) -> PatchGrid:
    return PatchGrid(int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)), 8)


# ---------------------------------------------------------------------------


def test_criterion_1_toolbox_oracle_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    n_add = n_remove = n_offset = n_fps = 0

    for _ in range(220):
        grid = _random_grid(rng)

        refs = oracles.random_patch_set(rng, grid, 6, empty_ok=False)
        ent = oracles.random_patch_set(rng, grid, 10)
        sub = oracles.random_patch_set(rng, grid, 10)
        alpha = int(rng.integers(1, 5))
        lam = float(rng.uniform(0.0, 0.5))
        expected = oracles.oracle_add_pairs(refs, ent, sub, alpha, lam, grid)
        try:
            mapping = add_tool(refs, ent, sub, AddParams(alpha=alpha, lambda_dist=lam), grid)
            assert expected is not None and mapping.pairs == expected
        except NoCandidateError:
            assert expected is None
        n_add += 1

        targets = oracles.random_patch_set(rng, grid, 6, empty_ok=False)
        radius = int(rng.integers(1, 4))
        expected = oracles.oracle_remove_pairs(targets, ent, sub, radius, grid)
        try:
            mapping = remove_tool(targets, ent, sub, RemoveParams(radius=radius), grid)
            assert expected is not None and mapping.pairs == expected
        except NoReferenceError:
            assert expected is None
        n_remove += 1

        region = oracles.random_patch_set(rng, grid, 8, empty_ok=False)
        opp = oracles.random_patch_set(rng, grid, 10)
        band = oracles.random_patch_set(rng, grid, 6)
        max_offset = int(rng.integers(1, 4))
        assert best_offset(region, opp, max_offset, grid, band) == \
            oracles.oracle_best_offset(region, opp, max_offset, grid, band)
        n_offset += 1

        pts = oracles.random_patch_set(rng, grid, 12, empty_ok=False)
        k = int(rng.integers(1, len(pts) + 1))
        assert farthest_point_sampling(pts, k) == oracles.oracle_fps(pts, k)
        n_fps += 1

    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"oracle equivalence took {elapsed:.1f}s"
    _report(1, f"{n_add}+{n_remove}+{n_offset}+{n_fps} oracle comparisons, "
               f"zero mismatches, {elapsed:.2f}s")


def test_criterion_2_mapping_invariants_10k():
    rng = np.random.default_rng(202)
    checked = 0
    attempts = 0
    while checked < 10_000:
        attempts += 1
        grid = _random_grid(rng)
        ent = oracles.random_patch_set(rng, grid, 10)
        sub = oracles.random_patch_set(rng, grid, 10)
        tool = Tool(["add", "remove", "distort", "fuse"][attempts % 4])
        try:
            if tool is Tool.ADD:
                refs = oracles.random_patch_set(rng, grid, 6, empty_ok=False)
                mapping = add_tool(refs, ent, sub,
                                   AddParams(alpha=int(rng.integers(1, 5)),
                                             lambda_dist=float(rng.uniform(0, 0.4))), grid)
                oracles.assert_mapping_invariants(mapping, refs=refs)
            elif tool is Tool.REMOVE:
                targets = oracles.random_patch_set(rng, grid, 6, empty_ok=False)
                mapping = remove_tool(targets, ent, sub,
                                      RemoveParams(radius=int(rng.integers(1, 4))), grid)
                oracles.assert_mapping_invariants(mapping, targets=targets, sub=sub)
            elif tool is Tool.DISTORT:
                targets = oracles.random_patch_set(rng, grid, 8, empty_ok=False)
                kernel = ("shuffle", "jitter", "strip")[attempts % 3]
                mapping = distort_tool(targets, ent,
                                       DistortParams(kernel=kernel,
                                                     sigma=float(rng.uniform(0, 2.5)),
                                                     strips=int(rng.integers(1, 5)),
                                                     max_attempts=4),
                                       grid, rng)
                oracles.assert_mapping_invariants(mapping, targets=targets, kernel=kernel)
            else:
                a = oracles.random_patch_set(rng, grid, 8, empty_ok=False)
                b = oracles.random_patch_set(rng, grid, 8, empty_ok=False)
                band_radius = int(rng.integers(1, 3))
                mapping = fuse_tool(a, b,
                                    FuseParams(band_radius=band_radius,
                                               max_offset=int(rng.integers(1, 4)),
                                               seeds=int(rng.integers(1, 5)),
                                               reversed_fraction=float(rng.uniform(0, 1))),
                                    grid, rng)
                overlap = a & b
                fg = a | b
                band = frozenset(
                    cell for cell in oracles.grid_cells(grid)
                    if cell in fg and overlap
                    and min(oracles.l1(cell, o) for o in overlap) <= band_radius
                )
                oracles.assert_mapping_invariants(mapping, band=band)
        except (NoCandidateError, NoReferenceError):
            continue
        checked += 1
    _report(2, f"{checked} randomized tool invocations, zero invariant violations")


def test_criterion_3_injection_identity_and_rope():
    rng = np.random.default_rng(303)
    for trial in range(100):
        h = int(rng.integers(1, 9))
        w = int(rng.integers(1, 9))
        grid = PatchGrid(h, w, 8)
        dim = int(rng.integers(1, 9)) * 4
        layer = ToyAttentionLayer.seeded(grid, dim, seed=trial)
        x = rng.standard_normal((grid.n, dim))
        vanilla, cache = attention_inversion_pass(layer, x)

        empty = PatchMapping((), Tool.ADD, grid)
        out = attention_injection_pass(layer, x, cache, empty, pe_on=True, value_on=True)
        assert np.abs(out - vanilla).max() < 1e-12

        identity = PatchMapping(tuple((c, c) for c in sorted(grid.all_coords())),
                                Tool.DISTORT, grid)
        out = attention_injection_pass(layer, x, cache, identity, pe_on=True, value_on=True)
        assert np.abs(out - vanilla).max() < 1e-12

    for _ in range(1000):
        d = int(rng.integers(1, 9)) * 4
        v = rng.standard_normal(d)
        pos = (int(rng.integers(0, 64)), int(rng.integers(0, 64)))
        assert abs(np.linalg.norm(rope_apply(v, pos)) - np.linalg.norm(v)) < 1e-9
        q, k = rng.standard_normal(d), rng.standard_normal(d)
        m, n = int(rng.integers(0, 48)), int(rng.integers(0, 48))
        axis = int(rng.integers(2))
        pm = (m, 0) if axis == 0 else (0, m)
        pn = (n, 0) if axis == 0 else (0, n)
        pd = (m - n, 0) if axis == 0 else (0, m - n)
        lhs = np.dot(rope_apply(q, pm), rope_apply(k, pn))
        rhs = np.dot(rope_apply(q, pd), k)
        assert abs(lhs - rhs) < 1e-9
    _report(3, "injection no-op identity < 1e-12 on 100 layers; "
               "RoPE isometry and relative-position < 1e-9 on 1000 trials")


def test_criterion_4_schedule_constants_exhaustive():
    sched = InjectionSchedule()
    flips = {"duplication": 20, "distortion": 20, "fusion": 20, "omission": 24}
    for artifact_type, flip in flips.items():
        for step in range(25):
            for block in range(48):
                pe_on, value_on = schedule_gates(sched, artifact_type, step, block)
                assert pe_on == (step < flip)
                assert value_on == (step < 15 and 20 <= block <= 38)
    _report(4, "PE gate flips at 20/25 (duplication, distortion, fusion) and 24/25 "
               "(omission); value gate = step<15 and block in [20,38], exhaustive")


def test_criterion_5_pixel_oracle_bit_exact():
    rng = np.random.default_rng(505)
    for _ in range(50):
        grid = PatchGrid(int(rng.integers(2, 9)), int(rng.integers(2, 9)),
                         int(rng.integers(1, 3)) * 8)
        img = rng.integers(0, 256, (grid.height_px, grid.width_px, 3), dtype=np.uint8)
        cells = sorted(grid.all_coords())
        n_pairs = int(rng.integers(1, min(8, len(cells)) + 1))
        target_idx = rng.choice(len(cells), size=n_pairs, replace=False)
        pairs = tuple(
            (cells[t], cells[int(rng.integers(len(cells)))]) for t in target_idx
        )
        mapping = PatchMapping(pairs, Tool.DISTORT, grid)
        out = render_pixel_oracle(img, mapping, grid, blend=0)
        px = grid.patch_px
        target_mask = np.zeros((grid.height_px, grid.width_px), dtype=bool)
        for t, r in pairs:
            target_mask[t[0] * px:(t[0] + 1) * px, t[1] * px:(t[1] + 1) * px] = True
            got = out[t[0] * px:(t[0] + 1) * px, t[1] * px:(t[1] + 1) * px]
            want = img[r[0] * px:(r[0] + 1) * px, r[1] * px:(r[1] + 1) * px]
            assert np.array_equal(got, want)
        assert np.array_equal(out[~target_mask], img[~target_mask])
    _report(5, "50 random images/mappings: target blocks equal reference blocks, "
               "background byte-identical")


def test_criterion_6_filter_gate_intervals():
    thr = FilterThresholds(0.5, 0.9)
    table = [
        (0.0, False, "too_similar"),
        (0.05, False, "too_similar"),
        (0.09999999, False, "too_similar"),
        (0.1, True, None),      # 1-d == tau2: closed bound keeps
        (0.25, True, None),
        (0.5, True, None),      # 1-d == tau1: closed bound keeps
        (0.50000001, False, "too_damaged"),
        (0.75, False, "too_damaged"),
        (10.0, False, "too_damaged"),
    ]
    for d, keep, reason in table:
        decision = metric_gate(d, thr)
        assert decision.keep is keep, f"d={d}"
        assert decision.reason == reason, f"d={d}"
    _report(6, "gate with tau1=0.5, tau2=0.9 keeps exactly d in [0.1, 0.5], "
               "closed at both boundaries")


def test_criterion_7_evaluation_identities():
    rng = np.random.default_rng(707)
    for _ in range(1000):
        pred = rng.random((8, 8)) > rng.uniform(0.2, 0.8)
        gt = rng.random((8, 8)) > rng.uniform(0.2, 0.8)
        iou, f1 = localization_metrics(pred, gt)
        assert abs(f1 - 2 * iou / (1 + iou)) < 1e-12
    pred = rasterize(RegionAnnotation("bbox", (0, 0, 2, 2), width=4, height=4))
    gt = rasterize(RegionAnnotation("bbox", (1, 1, 3, 3), width=4, height=4))
    iou, f1 = localization_metrics(pred, gt)
    assert abs(iou - 1 / 7) < 1e-12
    assert abs(f1 - 0.25) < 1e-12
    assert abs(rouge_l("the cat sat", "the dog sat") - 2 / 3) < 1e-12
    _report(7, "f1 = 2*iou/(1+iou) on 1000 random map pairs; worked examples "
               "(1/7, 0.25) and 2/3 exact to 1e-12")


def test_criterion_8_determinism_five_images(tmp_path):
    start = time.perf_counter()
    manifest = build_corpus(tmp_path / "corpus", n_images=5)
    cfg_a = load_config(write_config(tmp_path / "a.json", manifest, tmp_path / "out_a", seed=7))
    cfg_b = load_config(write_config(tmp_path / "b.json", manifest, tmp_path / "out_b", seed=7))
    summary_a = run_pipeline(cfg_a)
    summary_b = run_pipeline(cfg_b)
    assert summary_a.to_dict() == summary_b.to_dict()

    files_a = sorted(p.relative_to(cfg_a.output_dir)
                     for p in cfg_a.output_dir.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(cfg_b.output_dir)
                     for p in cfg_b.output_dir.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (cfg_a.output_dir / rel).read_bytes() == (cfg_b.output_dir / rel).read_bytes(), rel
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    assert len(files_a) > 20
    _report(8, f"two 5-image runs byte-identical across {len(files_a)} files, "
               f"{elapsed:.1f}s (< 60s, mock client)")


def test_criterion_9_end_to_end_fixture(tmp_path):
    manifest = build_corpus(tmp_path / "corpus", n_images=3)
    cfg = load_config(write_config(tmp_path / "c.json", manifest, tmp_path / "out", seed=7))
    summary = run_pipeline(cfg)
    assert summary.consistent()

    records = read_records(cfg.output_dir / "records.jsonl")
    by_type = {r.artifact_type for r in records}
    assert by_type == {"duplication", "omission", "distortion", "fusion"}

    # ArtifactRecord invariants re-validate on the disk round-trip
    for doc in read_jsonl(cfg.output_dir / "records.jsonl"):
        ArtifactRecord.from_dict(doc)

    # frozen VQA template texts, byte-exact
    assert VQA_BINARY_QUESTION == "Does this image contain any visual artifacts?"
    assert VQA_CLEAN_BINARY_ANSWER == "No."
    assert VQA_ARTIFACT_BINARY_ANSWER == "Yes."
    assert VQA_CLEAN_LOCATE_QUESTION == "Locate the {entity}'s {subentity}."
    assert VQA_CLEAN_REGION_QUESTION == "Is there a {entity}'s {subentity} in {bbox}?"
    assert VQA_CLEAN_DESCRIBE_QUESTION == "Describe the clean image."
    assert VQA_ARTIFACT_LOCATE_QUESTION == "Provide bounding boxes for all artifact regions."
    assert VQA_ARTIFACT_REGION_QUESTION == "Explain why region {bbox} is an artifact."
    assert VQA_ARTIFACT_DESCRIBE_QUESTION == "Describe all artifacts in the image."

    clean_turns = {t["question"]: t["answer"]
                   for doc in read_jsonl(cfg.output_dir / "vqa_clean.jsonl")
                   for t in doc["turns"]}
    assert clean_turns["Does this image contain any visual artifacts?"] == "No."
    assert "Locate the blob's nub." in clean_turns
    artifact_turns = {t["question"]: t["answer"]
                      for doc in read_jsonl(cfg.output_dir / "vqa_artifact.jsonl")
                      for t in doc["turns"]}
    assert artifact_turns["Does this image contain any visual artifacts?"] == "Yes."
    assert "Provide bounding boxes for all artifact regions." in artifact_turns
    _report(9, f"3-image corpus emitted {len(records)} records covering all four "
               "tool types; record invariants and frozen VQA templates hold")
