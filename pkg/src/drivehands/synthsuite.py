"""Desk-scale end-to-end check on a seeded synthetic corpus.

One corpus feeds every stage: the first ``skin_train`` scenes train the
illumination-conditioned skin bank, the rest are held out for pixel,
detection and refinement metrics. Grasp instances come from refining every
ground-truth hand box with that bank.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .evalkit import eval_pixels, evaluate_detections
from .graspclf import GraspConfig, GraspModel, train_grasp_pipeline
from .illumskin import FeatureConfig, ForestParams, IlluminationModelBank, bank_train, predict_skin
from .imagecore import ScoredBox, clamp_box, expand_box, iou, rasterize
from .proposals import FallbackParams, fallback_propose, filter_proposals
from .refine import RefineParams, extract_hand_instance, instance_from_mask, refine_detection
from .synth import SyntheticSceneSpec, generate_corpus


@dataclass(frozen=True)
class SuiteConfig:
    scene: SyntheticSceneSpec = SyntheticSceneSpec()
    n_images: int = 200
    skin_train: int = 140
    k: int = 10
    samples_per_image: int = 400
    # with 140 training images k-means leaves some clusters with one or two
    min_cluster_images: int = 10
    forest: ForestParams = ForestParams()
    refine: RefineParams = RefineParams()
    fallback: FallbackParams = FallbackParams()
    conf_thresh: float = 0.15
    nms_iou: float = 0.45
    n_background: int = 200
    loosen: tuple[float, float] = (0.15, 0.35)
    grasp: GraspConfig = GraspConfig(svm_iter=1000)
    # masked vs unmasked runs on a reduced training side, where neither
    # feature saturates at 100%, averaged over several splits
    masking: GraspConfig = GraspConfig(svm_iter=300, jitter_n=1, test_fraction=0.8, folds=5)
    masking_seeds: tuple[int, ...] = (0, 1, 2)
    seed: int = 0


TARGETS = {
    "pixel_f1": 0.90,
    "detection_ap": 90.0,
    "background_rejection": 0.95,
    "grasp_accuracy": 0.90,
}


@dataclass
class SuiteResult:
    metrics: dict
    passed: dict
    timings: dict
    config: dict = field(default_factory=dict)
    # trained models, kept for follow-up runs such as the latency bench
    bank: IlluminationModelBank | None = field(default=None, repr=False)
    grasp_model: GraspModel | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())


def _background_boxes(scene, n_per_image, rng, margin, tries=100):
    """Random boxes whose enlarged search region holds no skin at all."""
    h, w = scene.skin.shape
    out = []
    for _ in range(n_per_image):
        for _ in range(tries):
            bw, bh = rng.uniform(0.12, 0.3) * w, rng.uniform(0.15, 0.4) * h
            b = ScoredBox(rng.uniform(0, w - bw), rng.uniform(0, h - bh), bw, bh)
            x0, y0, x1, y1 = rasterize(clamp_box(expand_box(b, margin), 0, 0, w, h), w, h)
            if not scene.skin[y0:y1, x0:x1].any():
                out.append(b)
                break
    return out


def _loosen(box: ScoredBox, rng, lo, hi) -> ScoredBox:
    d = rng.uniform(lo, hi)
    return ScoredBox(box.x - d * box.w * rng.uniform(0.3, 0.7), box.y - d * box.h * rng.uniform(0.3, 0.7),
                     box.w * (1 + d), box.h * (1 + d))


def run_suite(cfg: SuiteConfig = SuiteConfig(), log=None) -> SuiteResult:
    say = log or (lambda msg: None)
    timings = {}
    t0 = time.perf_counter()
    scenes = generate_corpus(replace(cfg.scene, seed=cfg.seed), cfg.n_images)
    train, test = scenes[:cfg.skin_train], scenes[cfg.skin_train:]
    timings["synth"] = time.perf_counter() - t0

    t = time.perf_counter()
    bank = bank_train([(s.image, s.skin) for s in train], cfg.k, cfg.forest, cfg.seed, FeatureConfig(),
                      cfg.samples_per_image, min_images=cfg.min_cluster_images)
    timings["train_skin"] = time.perf_counter() - t
    say(f"skin bank: clusters {bank.training['cluster_sizes']}")

    t = time.perf_counter()
    pix = eval_pixels([predict_skin(s.image, bank) for s in test], [s.skin for s in test],
                      tau=cfg.refine.tau)
    timings["pixels"] = time.perf_counter() - t

    t = time.perf_counter()
    dets, gts = {}, {}
    for s in test:
        props = filter_proposals(fallback_propose(s.image, bank, cfg.fallback), cfg.conf_thresh, cfg.nms_iou)
        refined = [refine_detection(s.image, b, bank, cfg.refine) for b in props]
        dets[s.image_id] = [r.box for r in refined if r is not None]
        gts[s.image_id] = [hd.box for hd in s.hands]
    det = evaluate_detections(dets, gts, 0.5)
    timings["detection"] = time.perf_counter() - t

    t = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 1])
    per_image = max(1, -(-cfg.n_background // len(test)))
    bg = [b for s in test for b in
          ((s, x) for x in _background_boxes(s, per_image, rng, cfg.refine.margin))][:cfg.n_background]
    rejected = sum(refine_detection(s.image, b, bank, cfg.refine) is None for s, b in bg)
    before, after = [], []
    for s in test:
        for hd in s.hands:
            lb = clamp_box(_loosen(hd.box, rng, *cfg.loosen), 0, 0, s.image.shape[1], s.image.shape[0])
            r = refine_detection(s.image, lb, bank, cfg.refine)
            before.append(iou(lb, hd.box))
            after.append(iou(r.box, hd.box) if r is not None else 0.0)
    timings["refinement"] = time.perf_counter() - t

    t = time.perf_counter()
    instances, labels, fallback = [], [], 0
    for s in scenes:
        for hd in s.hands:
            r = refine_detection(s.image, hd.box, bank, cfg.refine)
            if r is None:
                fallback += 1
                inst = instance_from_mask(s.image, hd.box, hd.mask, s.image_id)
            else:
                inst = extract_hand_instance(s.image, r.box, r.mask, s.image_id, r.skin)
            instances.append(inst)
            labels.append(hd.grasp)
    images = {s.image_id: s.image for s in scenes}
    grasp = train_grasp_pipeline(instances, labels, cfg.grasp, cfg.seed, images)
    timings["grasp"] = time.perf_counter() - t

    t = time.perf_counter()
    acc = {True: [], False: []}
    for masked in (True, False):
        gc = replace(cfg.masking, masked=masked)
        for sd in cfg.masking_seeds:
            acc[masked].append(train_grasp_pipeline(instances, labels, gc, sd, images).report.overall)
    timings["masking"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0

    metrics = {
        "pixel_f1": pix.f1_at_tau,
        "pixel_precision": pix.precision[pix.taus.index(pix.tau)],
        "pixel_recall": pix.recall[pix.taus.index(pix.tau)],
        "detection_ap": det.ap,
        "detection_max_recall": det.max_recall,
        "background_proposals": len(bg),
        "background_rejection": rejected / max(len(bg), 1),
        "loosened_iou_before": float(np.mean(before)),
        "loosened_iou_after": float(np.mean(after)),
        "grasp_accuracy": grasp.report.overall,
        "grasp_per_class": grasp.report.per_class,
        "grasp_instances": len(instances),
        "grasp_mask_fallbacks": fallback,
        "masked_accuracy": float(np.mean(acc[True])),
        "unmasked_accuracy": float(np.mean(acc[False])),
    }
    passed = {name: metrics[name] >= target for name, target in TARGETS.items()}
    passed["refined_iou_improves"] = metrics["loosened_iou_after"] > metrics["loosened_iou_before"]
    passed["masking_beats_unmasked"] = metrics["masked_accuracy"] > metrics["unmasked_accuracy"]
    passed["under_two_minutes"] = timings["total"] < 120.0
    return SuiteResult(metrics, passed, timings, _jsonable(asdict(cfg)), bank, grasp.model)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.generic,)):
        return obj.item()
    return obj
