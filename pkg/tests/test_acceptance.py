"""Acceptance checks, one recorded line per criterion.

Every test appends ``(criterion, passed, detail)`` to ``RESULTS``; the
terminal-summary hook in conftest prints them after the run. Failures still
fail the test, so the summary and the exit code agree.
"""
import json
import subprocess
import sys
import time
import warnings
from pathlib import Path

import pytest

from drivehands.cli import REFINE_GRASP_BUDGET_MS, main
from drivehands.evalkit import eval_grasp, eval_pixels, evaluate_detections
from drivehands.graspclf import save_grasp_model
from drivehands.illumskin import save_bank
from drivehands.imagecore import ScoredBox
from drivehands.synthsuite import TARGETS, SuiteConfig, run_suite

import numpy as np

TESTS = Path(__file__).parent
RESULTS: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    RESULTS.append((criterion, bool(ok), detail))
    assert ok, f"{criterion}: {detail}"


def run_pytest(node_ids: list[str]) -> tuple[subprocess.CompletedProcess, float]:
    t = time.perf_counter()
    r = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *node_ids],
                       cwd=TESTS.parent, capture_output=True, text=True)
    return r, time.perf_counter() - t


def digest_tree(root: Path) -> dict[str, str]:
    import hashlib
    return {str(f.relative_to(root)): hashlib.sha256(f.read_bytes()).hexdigest()
            for f in sorted(root.rglob("*")) if f.is_file()}


# -- 1: metric definitions are computed, not reproduced ------------------------

def test_criterion_1_metric_definitions():
    # one L1 image and one image with an L2-only hand; FP is tall so it counts at both levels
    gts = {"a": [ScoredBox(0, 0, 40, 80), ScoredBox(200, 0, 20, 40)], "b": [ScoredBox(0, 0, 50, 100)]}
    dets = {
        "a": [ScoredBox(0, 0, 40, 80, 0.9), ScoredBox(100, 100, 45, 90, 0.65), ScoredBox(200, 0, 20, 40, 0.6)],
        "b": [ScoredBox(0, 0, 50, 100, 0.7)],
    }
    l2 = evaluate_detections(dets, gts, 0.5, "L2").ap
    l1 = evaluate_detections(dets, gts, 0.5, "L1").ap
    px = eval_pixels([np.array([[0.9, 0.2], [0.6, 0.4]])], [np.array([[1, 0], [0, 1]], bool)], tau=0.5)
    gr = eval_grasp(["wheel", "phone", "none", "none"], ["wheel", "phone", "phone", "none"],
                    ["wheel", "phone", "none"])
    table = gr.table(["Wheel Grasp", "Phone Grasp", "No Grasp"], "Hand Masking + HOG")
    ok = (abs(l2 - 100 * (2 / 3 + 0.75 / 3)) < 1e-9 and l1 == 100.0 and abs(px.f1_at_tau - 0.5) < 1e-12
          and gr.per_class == [1.0, 0.5, 1.0] and gr.overall == 0.75 and "Overall Accuracy" in table)
    record("1 metric harness", ok, f"L2 AP {l2:.3f}, L1 AP {l1:.1f}, pixel F1 {px.f1_at_tau:.2f}, "
                                   f"grasp overall {gr.overall:.2f}")


# -- 2: oracle suites, each under 10 s -------------------------------------------

ORACLES = {
    "k-means vs brute-force partition": ["tests/test_illumskin.py::test_kmeans_matches_brute_force_two_partition"],
    "SVM vs dual QP oracle": ["tests/test_graspclf.py::test_subgradient_matches_dual_oracle"],
    "PCA vs covariance eigen oracle": ["tests/test_graspfeat.py::test_pca_matches_covariance_eigen_oracle"],
    "AP vs hand staircases": ["tests/test_evalkit.py::test_ap_examples", "tests/test_evalkit.py::test_ap_eleven_point"],
    "HOG length and brightness shift": ["tests/test_graspfeat.py::test_hog_default_length",
                                        "tests/test_graspfeat.py::test_hog_brightness_shift_invariant"],
}


@pytest.mark.parametrize("name", list(ORACLES))
def test_criterion_2_oracle(name):
    r, secs = run_pytest(ORACLES[name])
    # wall time includes interpreter start-up, so it over-states the oracle itself
    record(f"2 oracle: {name}", r.returncode == 0 and secs < 10.0,
           f"{r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr[-200:]} ({secs:.1f} s wall)")


# -- 3: synthetic end to end -----------------------------------------------------

@pytest.fixture(scope="module")
def suite():
    return run_suite(SuiteConfig())


def test_criterion_3a_pixel_f1(suite):
    m = suite.metrics
    record("3a pixel skin F1 at tau 0.5", m["pixel_f1"] >= TARGETS["pixel_f1"],
           f"F1 {m['pixel_f1']:.3f} (P {m['pixel_precision']:.3f}, R {m['pixel_recall']:.3f}) >= 0.90")


def test_criterion_3b_detection_ap(suite):
    m = suite.metrics
    record("3b detection AP at IoU 0.5", m["detection_ap"] >= TARGETS["detection_ap"],
           f"AP {m['detection_ap']:.2f} % >= 90 % (fallback proposals + refinement)")


def test_criterion_3c_background_rejection(suite):
    m = suite.metrics
    record("3c background proposals rejected", m["background_rejection"] >= TARGETS["background_rejection"],
           f"{m['background_rejection']:.3f} of {m['background_proposals']} >= 0.95")


def test_criterion_3d_refinement_tightens(suite):
    m = suite.metrics
    record("3d refinement improves loosened IoU", m["loosened_iou_after"] > m["loosened_iou_before"],
           f"mean IoU {m['loosened_iou_before']:.3f} -> {m['loosened_iou_after']:.3f}")


def test_criterion_3e_grasp_accuracy(suite):
    m = suite.metrics
    per = ", ".join(f"{a:.2f}" for a in m["grasp_per_class"])
    record("3e 3-class grasp held-out accuracy", m["grasp_accuracy"] >= TARGETS["grasp_accuracy"],
           f"{m['grasp_accuracy']:.3f} >= 0.90 (wheel/phone/none {per})")


def test_criterion_3f_masking_gain(suite):
    m = suite.metrics
    record("3f masked beats unmasked HOG", m["masked_accuracy"] > m["unmasked_accuracy"],
           f"{m['masked_accuracy']:.3f} vs {m['unmasked_accuracy']:.3f}")


def test_criterion_3_time_budget(suite):
    t = suite.timings
    record("3 end-to-end under 2 minutes", t["total"] < 120.0,
           f"{t['total']:.1f} s (skin {t['train_skin']:.0f}, pixels {t['pixels']:.0f}, grasp {t['grasp']:.0f})")


# -- 4: determinism through the command line ---------------------------------------

def test_criterion_4_cli_determinism(tmp_path):
    corpus, models, out = tmp_path / "corpus", tmp_path / "models", tmp_path / "out"
    steps = [
        ["synth", "--out", str(corpus), "--n", "40", "--seed", "3"],
        ["train-skin", "--corpus", str(corpus), "--bank", str(models / "bank.json"), "--seed", "3",
         "--k", "3", "--n-trees", "8", "--samples-per-image", "300"],
        ["train-grasp", "--corpus", str(corpus), "--grasp-model", str(models / "grasp.json"), "--seed", "3",
         "--folds", "3", "--jitter-n", "2", "--pca-dim", "10", "--svm-iter", "100"],
        ["infer", str(corpus / "images"), "--fallback-proposer", "--bank", str(models / "bank.json"),
         "--grasp-model", str(models / "grasp.json"), "--out", str(out / "dets.jsonl"),
         "--export-dir", str(out / "chips"), "--jobs", "2", "--seed", "3"],
    ]
    models.mkdir()
    out.mkdir()
    runs = []
    for _ in range(2):
        for argv in steps:
            assert main(argv) == 0, argv
        runs.append(digest_tree(tmp_path))
    diff = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    record("4 byte-identical synth/train/infer reruns", not diff and runs[0].keys() == runs[1].keys(),
           f"{len(runs[0])} artifacts hashed, {len(diff)} differ")


# -- 5: invariant suite --------------------------------------------------------------

INVARIANTS = {
    "imagecore": ["tests/test_imagecore.py::test_iou_symmetric_and_bounded",
                  "tests/test_imagecore.py::test_nms_properties",
                  "tests/test_imagecore.py::test_resize_preserves_range",
                  "tests/test_imagecore.py::test_crop_composes"],
    "pixelfeat": ["tests/test_pixelfeat.py::test_histogram_normalised_and_permutation_invariant",
                  "tests/test_pixelfeat.py::test_sift_luminance_invariance",
                  "tests/test_pixelfeat.py::test_color_channels_consistent_with_imagecore"],
    "illumskin": ["tests/test_illumskin.py::test_kmeans_distortion_non_increasing",
                  "tests/test_illumskin.py::test_forest_predictions_within_target_range",
                  "tests/test_illumskin.py::test_bank_training_deterministic",
                  "tests/test_illumskin.py::test_k1_equals_single_global_forest"],
    "proposals": ["tests/test_proposals.py::test_filter_subset_and_monotone",
                  "tests/test_proposals.py::test_save_load_round_trip"],
    "refine": ["tests/test_refine.py::test_never_grows_beyond_search_region",
               "tests/test_refine.py::test_rejection_monotone_in_f_min"],
    "graspfeat": ["tests/test_graspfeat.py::test_hog_brightness_shift_invariant",
                  "tests/test_graspfeat.py::test_hog_block_norms_bounded",
                  "tests/test_graspfeat.py::test_pca_orthonormal_and_variance",
                  "tests/test_graspfeat.py::test_jitter_deterministic_and_in_frame"],
    "graspclf": ["tests/test_graspclf.py::test_averaged_objective_non_increasing",
                 "tests/test_graspclf.py::test_prediction_invariant_to_positive_scaling",
                 "tests/test_graspclf.py::test_stratified_folds_proportions",
                 "tests/test_graspclf.py::test_ovr_argmax_and_ties"],
    "evalkit": ["tests/test_evalkit.py::test_match_counts",
                "tests/test_evalkit.py::test_ap_invariant_to_monotone_rescaling",
                "tests/test_evalkit.py::test_perfect_ranking_maximises_ap",
                "tests/test_evalkit.py::test_l1_implies_l2"],
    "cli": ["tests/test_cli.py::test_synth_byte_identical",
            "tests/test_cli.py::test_train_skin_log_and_determinism",
            "tests/test_cli.py::test_train_grasp_and_infer_repeat_byte_identical",
            "tests/test_cli.py::test_infer_fallback_parallel_matches_serial",
            "tests/test_cli.py::test_every_artifact_echoes_full_config"],
}


def test_criterion_5_invariant_suite(suite):
    ids = [i for group in INVARIANTS.values() for i in group]
    r, secs = run_pytest(ids)
    summary = r.stdout.strip().splitlines()[-1] if r.stdout.strip() else r.stderr[-200:]
    # the refinement pipeline property is measured by the end-to-end suite
    bg = suite.metrics["background_rejection"]
    record("5 module invariants", r.returncode == 0 and f"{len(ids)} passed" in summary and bg >= 0.95,
           f"{summary}; background rejection {bg:.3f} ({secs:.0f} s)")


# -- 6: throughput report (soft threshold) ---------------------------------------------

def test_criterion_6_bench_report(suite, tmp_path, capsys):
    bank, grasp, out = tmp_path / "bank.json", tmp_path / "grasp.json", tmp_path / "bench.json"
    save_bank(bank, suite.bank)
    save_grasp_model(grasp, suite.grasp_model)
    assert main(["bench", "--bank", str(bank), "--grasp-model", str(grasp), "--frames", "20",
                 "--max-proposals", "8", "--out", str(out)]) == 0
    capsys.readouterr()
    rep = json.loads(out.read_text())
    stages = rep["stages"]
    emitted = rep["frames"] == 20 and all(stages[s]["mean_ms"] > 0 for s in ("skin_proposals", "refinement", "frame"))
    ms = rep["refine_plus_grasp_mean_ms"]
    if not rep["within_budget"]:
        warnings.warn(f"refinement + grasp {ms:.0f} ms per VGA frame exceeds the "
                      f"{REFINE_GRASP_BUDGET_MS:.0f} ms soft target")
    note = "within" if rep["within_budget"] else "WARN over"
    record("6 bench per-stage latency report", emitted,
           f"refine+grasp {ms:.0f} ms/frame ({note} {REFINE_GRASP_BUDGET_MS:.0f} ms soft target), "
           f"proposals {stages['skin_proposals']['mean_ms']:.0f} ms, {rep['mean_proposals']:.1f} props/frame, "
           f"{rep['fps']:.1f} fps")
