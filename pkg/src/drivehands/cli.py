"""``drivehands`` command-line driver.

Subcommands: train-skin, train-grasp, infer, eval-detect, eval-pixels,
eval-grasp, synth, bench. Every :class:`PipelineConfig` key is accepted as a
flag (``--conf-thresh 0.2``) and overrides ``--config FILE``. Exit status is
0 only when the command fully succeeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import FIELD_NAMES, ConfigError, PipelineConfig, flag_name, load_config, parse_value
from .evalkit import eval_grasp, eval_pixels, evaluate_detections, load_ground_truth
from .graspclf import LABEL_ORDER, GraspLabel, load_grasp_model, save_grasp_model, train_grasp_pipeline
from .illumskin import bank_train, load_bank, predict_skin, save_bank
from .imagecore import list_images, read_gray, read_image, read_mask
from .proposals import box_record, dump_records, fallback_propose, filter_proposals, load_proposals
from .refine import export_instance, extract_hand_instance, instance_from_mask, refine_detection
from .synth import SyntheticSceneSpec, generate_corpus, render_scene, write_corpus

log = logging.getLogger("drivehands")

VGA = (640, 480)
REFINE_GRASP_BUDGET_MS = 100.0


class CommandError(Exception):
    pass


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _require(value, what: str):
    if value is None:
        raise CommandError(f"missing {what}")
    return value


def _corpus_pairs(directory):
    root = Path(directory)
    if not (root / "images").is_dir() or not (root / "masks").is_dir():
        raise CommandError(f"{root} needs images/ and masks/ subdirectories")
    out = []
    for p in list_images(root / "images"):
        mp = root / "masks" / f"{p.stem}.png"
        if mp.exists():
            out.append((p.stem, read_image(p), read_mask(mp)))
    if not out:
        raise CommandError(f"no image/mask pairs under {root}")
    return out


# -- train-skin ---------------------------------------------------------------

def cmd_train_skin(cfg: PipelineConfig, args) -> int:
    corpus = _corpus_pairs(_require(cfg.corpus, "--corpus"))
    out = _require(cfg.bank or cfg.out, "--bank (output path)")
    bank = bank_train([(img, m) for _, img, m in corpus], cfg.k, cfg.forest_params(), cfg.seed,
                      cfg.feature_config(), cfg.samples_per_image, cfg.kmeans_iters, cfg.jobs,
                      cfg.min_cluster_images)
    bank.training["images"] = [i for i, _, _ in corpus]
    bank.config = cfg.to_dict()
    save_bank(out, bank)
    tr = bank.training
    _write_json(f"{out}.log.json", {"cluster_sizes": tr["cluster_sizes"], "cluster_samples": tr["cluster_samples"],
                                    "cluster_positives": tr["cluster_positives"],
                                    "fallback_clusters": tr["fallback_clusters"], "config": bank.config})
    for c, (n, s) in enumerate(zip(tr["cluster_sizes"], tr["cluster_samples"])):
        log.info("cluster %d: %d images, %d training pixels", c, n, s)
    return 0


# -- train-grasp --------------------------------------------------------------

def _grasp_instances(cfg: PipelineConfig):
    root = Path(_require(cfg.corpus, "--corpus"))
    gt_path = root / "gt.jsonl"
    if not gt_path.exists():
        raise CommandError(f"{gt_path} not found")
    boxes, records = load_ground_truth(gt_path)
    bank = load_bank(cfg.bank) if cfg.bank else None
    instances, labels, images, masks = [], [], {}, {}
    refined = 0
    for image_id in sorted(boxes):
        img = read_image(root / "images" / f"{image_id}.png")
        full = read_mask(root / "masks" / f"{image_id}.png")
        images[image_id] = img
        masks[image_id] = full
        for box, rec in zip(boxes[image_id], records[image_id]):
            if "grasp" not in rec:
                raise CommandError(f"ground truth for {image_id} lacks a 'grasp' label")
            inst = None
            if bank is not None:
                r = refine_detection(img, box, bank, cfg.refine_params())
                if r is not None:
                    inst = extract_hand_instance(img, r.box, r.mask, image_id, r.skin)
                    refined += 1
            if inst is None:
                inst = instance_from_mask(img, box, full, image_id)
            instances.append(inst)
            labels.append(GraspLabel(rec["grasp"]))
    return instances, labels, images, (None if bank is not None else masks), refined


def cmd_train_grasp(cfg: PipelineConfig, args) -> int:
    out = _require(cfg.grasp_model or cfg.out, "--grasp-model (output path)")
    instances, labels, images, masks, refined = _grasp_instances(cfg)
    res = train_grasp_pipeline(instances, labels, cfg.grasp_config(), cfg.seed, images, masks)
    res.model.config = cfg.to_dict()
    res.model.training["refined_instances"] = refined
    save_grasp_model(out, res.model)
    names = ["Wheel", "No-wheel"] if cfg.task == "binary" else ["Wheel", "Phone", "No-grasp"]
    row = ("Hand Masking + HOG" if cfg.masked else "Detection + HOG")
    table = res.report.table(names, row)
    _write_json(f"{out}.report.json", {**res.report.to_dict(), "table": table, "config": cfg.to_dict()})
    sys.stdout.write(table)
    return 0


# -- infer ----------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(cfg, bank_path, grasp_path, proposals, fallback, export_dir):
    _WORKER.update(cfg=cfg, bank=load_bank(bank_path),
                   grasp=load_grasp_model(grasp_path) if grasp_path else None,
                   proposals=proposals, fallback=fallback, export_dir=export_dir)


def _infer_one(path: str):
    """Detections for one image as ``(ok, records, message)``."""
    st = _WORKER
    cfg: PipelineConfig = st["cfg"]
    p = Path(path)
    try:
        img = read_image(p)
    except (OSError, ValueError) as exc:
        return False, [], f"cannot read {p}: {exc}"
    image_id = p.stem
    if st["fallback"]:
        props = fallback_propose(img, st["bank"], cfg.fallback_params())
    else:
        props = st["proposals"].get(image_id, st["proposals"].get(p.name, []))
    records = []
    for j, box in enumerate(filter_proposals(props, cfg.conf_thresh, cfg.nms_iou)):
        r = refine_detection(img, box, st["bank"], cfg.refine_params())
        if r is None:
            continue
        extra = {"skin": r.skin}
        if st["grasp"] is not None or st["export_dir"]:
            inst = extract_hand_instance(img, r.box, r.mask, image_id, r.skin)
            if st["grasp"] is not None:
                extra["grasp"] = str(st["grasp"].predict_instance(inst))
            if st["export_dir"]:
                export_instance(st["export_dir"], f"{image_id}_{j:03d}", inst)
        records.append(box_record(image_id, r.box, **extra))
    return True, records, ""


def _image_paths(items) -> list[str]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths += [str(q) for q in list_images(p)]
        else:
            paths.append(str(p))
    return paths


def _map_ordered(fn, items, jobs, initializer, initargs):
    """``map`` over a worker pool; results come back in input order."""
    if jobs <= 1 or len(items) <= 1:
        initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(jobs, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def cmd_infer(cfg: PipelineConfig, args) -> int:
    bank_path = _require(cfg.bank, "--bank")
    out = _require(cfg.out, "--out (detections file)")
    if not args.fallback_proposer and not args.proposals:
        raise CommandError("give --proposals FILE or --fallback-proposer")
    for p in (bank_path, cfg.grasp_model):
        if p and not Path(p).exists():
            raise CommandError(f"model file {p} not found")
    proposals = {} if args.fallback_proposer else load_proposals(args.proposals)
    paths = _image_paths(args.images)
    if not paths:
        raise CommandError("no input images")
    results = _map_ordered(_infer_one, paths, cfg.jobs, _init_worker,
                           (cfg, bank_path, cfg.grasp_model, proposals, args.fallback_proposer, args.export_dir))
    failed = 0
    records = []
    for ok, recs, msg in results:
        if not ok:
            failed += 1
            log.warning(msg)
        records += recs
    Path(out).write_text(dump_records(records), encoding="utf-8")
    _write_json(f"{out}.meta.json", {"images": len(paths), "failed": failed, "detections": len(records),
                                     "proposals": "fallback" if args.fallback_proposer else str(args.proposals),
                                     "config": cfg.to_dict()})
    if failed:
        log.error("%d of %d images could not be processed", failed, len(paths))
        return 1
    return 0


# -- evaluation -----------------------------------------------------------------

def cmd_eval_detect(cfg: PipelineConfig, args) -> int:
    dets = load_proposals(_require(args.detections, "--detections"))
    gts, _ = load_ground_truth(_require(args.gt, "--gt"))
    rep = evaluate_detections(dets, gts, cfg.iou_min, cfg.level, cfg.ap_method)
    rep.config = {**rep.config, "pipeline": cfg.to_dict()}
    if cfg.out:
        Path(cfg.out).write_text(rep.to_json() + "\n", encoding="utf-8")
    if args.pr_csv:
        Path(args.pr_csv).write_text(rep.pr_csv(), encoding="utf-8")
    sys.stdout.write(rep.table())
    return 0


def cmd_eval_pixels(cfg: PipelineConfig, args) -> int:
    if args.prob_dir:
        masks_dir = Path(_require(args.masks, "--masks"))
        probs, gts = [], []
        for p in list_images(args.prob_dir):
            probs.append(read_gray(p) / 255.0)
            gts.append(read_mask(masks_dir / f"{p.stem}.png"))
        if not probs:
            raise CommandError("no probability maps found")
    else:
        bank = load_bank(_require(cfg.bank, "--bank"))
        corpus = _corpus_pairs(_require(cfg.corpus, "--corpus"))
        probs = [predict_skin(img, bank, cfg.blend_n).probs for _, img, _ in corpus]
        gts = [m for _, _, m in corpus]
    rep = eval_pixels(probs, gts, tau=cfg.tau)
    if cfg.out:
        _write_json(cfg.out, {**json.loads(rep.to_json()), "config": cfg.to_dict()})
    if args.pr_csv:
        Path(args.pr_csv).write_text(rep.pr_csv(), encoding="utf-8")
    k = rep.taus.index(rep.tau)
    sys.stdout.write(f"tau {rep.tau:g}: precision {rep.precision[k]:.4f} recall {rep.recall[k]:.4f} "
                     f"F1 {rep.f1_at_tau:.4f}\n")
    return 0


def _grasp_labels(path) -> list[tuple[str | None, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "grasp" not in rec:
                raise CommandError(f"{path}:{lineno}: no 'grasp' field")
            out.append((rec.get("image"), str(rec["grasp"])))
    return out


def cmd_eval_grasp(cfg: PipelineConfig, args) -> int:
    preds = _grasp_labels(_require(args.pred, "--pred"))
    truth = _grasp_labels(_require(args.truth, "--truth"))
    if len(preds) != len(truth):
        raise CommandError(f"{len(preds)} predictions for {len(truth)} labels")
    for (pi, _), (ti, _) in zip(preds, truth):
        if pi is not None and ti is not None and pi != ti:
            raise CommandError(f"prediction for {pi} paired with label for {ti}")
    labels = {t for _, t in truth} | {p for _, p in preds}
    if labels <= {"wheel", "no_wheel"}:
        classes, names = ["wheel", "no_wheel"], ["Wheel", "No-wheel"]
    elif labels <= {str(c) for c in LABEL_ORDER}:
        classes, names = [str(c) for c in LABEL_ORDER], ["Wheel", "Phone", "No-grasp"]
    else:
        classes = names = None
    rep = eval_grasp([p for _, p in preds], [t for _, t in truth], classes)
    table = rep.table(names, args.row or "")
    if cfg.out:
        _write_json(cfg.out, {**rep.to_dict(), "table": table, "config": cfg.to_dict()})
    sys.stdout.write(table)
    return 0


# -- synth / bench ----------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, args) -> int:
    out = Path(_require(cfg.out, "--out (directory)"))
    spec = SyntheticSceneSpec(width=args.width, height=args.height, seed=cfg.seed)
    write_corpus(out, generate_corpus(spec, args.n))
    spec_doc = {k: list(v) if isinstance(v, tuple) else v for k, v in spec.__dict__.items()}
    _write_json(out / "spec.json", {"spec": spec_doc, "n": args.n, "config": cfg.to_dict()})
    return 0


def _bench_frames(args, seed):
    if args.images:
        for p in _image_paths([args.images]):
            yield p, read_image(p)
        return
    spec = SyntheticSceneSpec(width=VGA[0], height=VGA[1], hand_height=(120, 200), seed=seed)
    for i in range(args.frames):
        yield f"vga{i:05d}", render_scene(spec, np.random.default_rng([seed, i])).image


def cmd_bench(cfg: PipelineConfig, args) -> int:
    bank = load_bank(_require(cfg.bank, "--bank"))
    grasp = load_grasp_model(_require(cfg.grasp_model, "--grasp-model"))
    stages = {"skin_proposals": [], "refinement": [], "grasp": [], "frame": []}
    n_props = []
    for _, img in _bench_frames(args, cfg.seed):
        t0 = time.perf_counter()
        props = filter_proposals(fallback_propose(img, bank, cfg.fallback_params()),
                                 cfg.conf_thresh, cfg.nms_iou)[:args.max_proposals]
        t1 = time.perf_counter()
        insts = []
        for b in props:
            r = refine_detection(img, b, bank, cfg.refine_params())
            if r is not None:
                insts.append(extract_hand_instance(img, r.box, r.mask, "", r.skin))
        t2 = time.perf_counter()
        if insts:
            grasp.predict_chips([i.chip if grasp.masked else i.raw_chip for i in insts])
        t3 = time.perf_counter()
        for key, dt in zip(("skin_proposals", "refinement", "grasp", "frame"), (t1 - t0, t2 - t1, t3 - t2, t3 - t0)):
            stages[key].append(1000.0 * dt)
        n_props.append(len(props))
    if not stages["frame"]:
        raise CommandError("no frames to benchmark")
    ms = {k: {"mean_ms": float(np.mean(v)), "median_ms": float(np.median(v)), "max_ms": float(np.max(v))}
          for k, v in stages.items()}
    per_frame = np.asarray(stages["refinement"]) + np.asarray(stages["grasp"])
    report = {
        "frames": len(stages["frame"]),
        "mean_proposals": float(np.mean(n_props)),
        "stages": ms,
        "refine_plus_grasp_mean_ms": float(per_frame.mean()),
        "refine_plus_grasp_budget_ms": REFINE_GRASP_BUDGET_MS,
        "within_budget": bool(per_frame.mean() <= REFINE_GRASP_BUDGET_MS),
        "fps": float(1000.0 / np.mean(stages["frame"])),
        "config": cfg.to_dict(),
    }
    if not report["within_budget"]:
        log.warning("refinement + grasp take %.1f ms per frame, above the %.0f ms target",
                    report["refine_plus_grasp_mean_ms"], REFINE_GRASP_BUDGET_MS)
    if cfg.out:
        _write_json(cfg.out, report)
    sys.stdout.write(json.dumps({k: v for k, v in report.items() if k != "config"}, indent=2) + "\n")
    return 0


# -- argument parsing ---------------------------------------------------------------

COMMANDS = {
    "train-skin": (cmd_train_skin, "train the illumination-conditioned skin bank"),
    "train-grasp": (cmd_train_grasp, "train the HOG/PCA/SVM grasp classifier"),
    "infer": (cmd_infer, "refine proposals and classify grasps"),
    "eval-detect": (cmd_eval_detect, "detection PR/AP against ground-truth boxes"),
    "eval-pixels": (cmd_eval_pixels, "pixel-level skin precision/recall"),
    "eval-grasp": (cmd_eval_grasp, "grasp accuracy table from prediction/label files"),
    "synth": (cmd_synth, "write a seeded synthetic corpus"),
    "bench": (cmd_bench, "per-stage latency on VGA frames"),
}


class _ConfigValue(argparse.Action):
    def __call__(self, parser, namespace, value, option_string=None):
        try:
            parsed = parse_value(self.dest, "true" if value is None else value)
        except ConfigError as exc:
            parser.error(str(exc))
        # subparsers parse into a fresh namespace, so create the dict on demand
        if getattr(namespace, "overrides", None) is None:
            namespace.overrides = {}
        namespace.overrides[self.dest] = parsed


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration (each overrides --config)")
    g.add_argument("--config", default=None, help="flat 'key = value' configuration file")
    for name in FIELD_NAMES:
        g.add_argument(flag_name(name), dest=name, action=_ConfigValue, nargs="?", metavar="V",
                       default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivehands", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}
    for name, (_, helptext) in COMMANDS.items():
        subs[name] = sp = sub.add_parser(name, help=helptext)
        _add_config_flags(sp)
    subs["infer"].add_argument("images", nargs="+", help="image files or directories")
    subs["infer"].add_argument("--proposals", help="proposal JSON-lines file")
    subs["infer"].add_argument("--fallback-proposer", action="store_true",
                               help="use skin-blob proposals instead of a detector file")
    subs["infer"].add_argument("--export-dir", help="write masked chips, masks and sidecars here")
    subs["eval-detect"].add_argument("--detections", required=True)
    subs["eval-detect"].add_argument("--gt", required=True)
    subs["eval-detect"].add_argument("--pr-csv")
    subs["eval-pixels"].add_argument("--prob-dir", help="8-bit probability maps (value / 255)")
    subs["eval-pixels"].add_argument("--masks", help="ground-truth masks matching --prob-dir")
    subs["eval-pixels"].add_argument("--pr-csv")
    subs["eval-grasp"].add_argument("--pred", required=True)
    subs["eval-grasp"].add_argument("--truth", required=True)
    subs["eval-grasp"].add_argument("--row", help="row title for the table")
    subs["synth"].add_argument("--n", type=int, default=200)
    subs["synth"].add_argument("--width", type=int, default=240)
    subs["synth"].add_argument("--height", type=int, default=180)
    subs["bench"].add_argument("--images", help="directory of frames (default: synthetic VGA)")
    subs["bench"].add_argument("--frames", type=int, default=100)
    subs["bench"].add_argument("--max-proposals", type=int, default=8)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, getattr(args, "overrides", None))
        return COMMANDS[args.command][0](cfg, args)
    except (CommandError, ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
