"""Evaluation: detection PR/AP at an IoU criterion with L1/L2 height levels,
pixel-level skin metrics, and grasp classification reports."""
from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .imagecore import ScoredBox, iou
from .proposals import parse_box_line

LEVEL_MIN_HEIGHT = {"L1": 70.0, "L2": 25.0}


def level_of(box: ScoredBox) -> str | None:
    """Tightest level a ground-truth box qualifies for (L1 implies L2)."""
    if box.h >= LEVEL_MIN_HEIGHT["L1"]:
        return "L1"
    if box.h >= LEVEL_MIN_HEIGHT["L2"]:
        return "L2"
    return None


def in_level(box: ScoredBox, level: str | None) -> bool:
    return level is None or box.h >= LEVEL_MIN_HEIGHT[level]


GroundTruthSet = dict[str, list[ScoredBox]]


def load_ground_truth(path) -> tuple[GroundTruthSet, dict[str, list[dict]]]:
    """Read ``{"image", "x", "y", "w", "h"}`` lines; extra keys are kept in
    the second return value (parallel to the boxes)."""
    boxes: GroundTruthSet = {}
    records: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            image, box, rec = parse_box_line(line, lineno, need_score=False)
            boxes.setdefault(image, []).append(box)
            records.setdefault(image, []).append(rec)
    return boxes, records


# -- detection ------------------------------------------------------------

def match_detections(dets: Sequence[ScoredBox], gts: Sequence[ScoredBox],
                     iou_min: float = 0.5, ignore: Sequence[bool] | None = None):
    """Greedy single-use matching in descending score order.

    Returns ``(tp, fn)`` where ``tp[i]`` is True/False for detection ``i``
    (input order) or None when it only matched an ignored ground truth.
    """
    if not 0.0 < iou_min <= 1.0:
        raise ValueError("iou_min must lie in (0, 1]")
    ignore = list(ignore) if ignore is not None else [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    used = [False] * len(gts)
    tp: list[bool | None] = [False] * len(dets)
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if used[j] or ignore[j]:
                continue
            o = iou(dets[i], g)
            if o >= iou_min and o > best:
                best, best_j = o, j
        if best_j >= 0:
            used[best_j] = True
            tp[i] = True
            continue
        if any(ig and iou(dets[i], g) >= iou_min for g, ig in zip(gts, ignore)):
            tp[i] = None
    fn = sum(1 for j in range(len(gts)) if not used[j] and not ignore[j])
    return tp, fn


def pr_curve(scores: Sequence[float], tp: Sequence[bool], n_gt: int):
    """Precision/recall after each detection, ranked by descending score."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = np.asarray(tp, dtype=np.float64)[order]
    ctp = np.cumsum(hits)
    cfp = np.cumsum(1.0 - hits)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).tiny)
    return recall, precision


def average_precision(scores: Sequence[float], tp: Sequence[bool], n_gt: int,
                      method: str = "all") -> float:
    """Area under the interpolated precision envelope, in percent.

    ``method="all"`` integrates every recall step; ``"11pt"`` averages the
    envelope at recall 0, 0.1, ..., 1.
    """
    if n_gt < 1:
        raise ValueError("need at least one ground-truth instance")
    if len(scores) == 0:
        return 0.0
    recall, precision = pr_curve(scores, tp, n_gt)
    if method == "11pt":
        pts = [precision[recall >= t].max() if np.any(recall >= t) else 0.0
               for t in np.linspace(0, 1, 11)]
        return float(np.mean(pts) * 100.0)
    if method != "all":
        raise ValueError(f"unknown AP method {method!r}")
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]) * 100.0)


@dataclass
class EvalReport:
    ap: float
    max_recall: float
    tp: int
    fp: int
    fn: int
    n_gt: int
    recall: list[float] = field(default_factory=list)
    precision: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def pr_csv(self) -> str:
        buf = io.StringIO()
        buf.write("recall,precision\n")
        for r, p in zip(self.recall, self.precision):
            buf.write(f"{r!r},{p!r}\n")
        return buf.getvalue()

    def table(self) -> str:
        lvl = self.config.get("level") or "all"
        return (f"{'level':<8}{'AP':>8}{'recall':>9}{'TP':>7}{'FP':>7}{'FN':>7}\n"
                f"{lvl:<8}{self.ap:8.1f}{100 * self.max_recall:9.1f}{self.tp:7d}{self.fp:7d}{self.fn:7d}\n")


def evaluate_detections(dets: Mapping[str, Sequence[ScoredBox]], gts: Mapping[str, Sequence[ScoredBox]],
                        iou_min: float = 0.5, level: str | None = None,
                        method: str = "all") -> EvalReport:
    """Corpus-level PR/AP. Ground truths below ``level``'s minimum height are
    ignored: they are not misses, and detections on them are not counted."""
    scores, flags = [], []
    fn_total = n_gt = 0
    for image in sorted(set(dets) | set(gts)):
        g = list(gts.get(image, []))
        d = list(dets.get(image, []))
        ignore = [not in_level(b, level) for b in g]
        tp, fn = match_detections(d, g, iou_min, ignore)
        fn_total += fn
        n_gt += sum(1 for ig in ignore if not ig)
        for box, t in zip(d, tp):
            if t is not None:
                scores.append(box.score)
                flags.append(t)
    cfg = {"iou_min": iou_min, "level": level, "method": method}
    n_tp = int(sum(flags))
    if n_gt == 0:
        return EvalReport(0.0, 0.0, n_tp, len(flags) - n_tp, 0, 0, config=cfg)
    recall, precision = pr_curve(scores, flags, n_gt)
    ap = average_precision(scores, flags, n_gt, method)
    return EvalReport(ap, float(recall[-1]) if len(recall) else 0.0, n_tp, len(flags) - n_tp,
                      fn_total, n_gt, recall.tolist(), precision.tolist(), cfg)


# -- pixels ---------------------------------------------------------------

@dataclass
class PixelReport:
    taus: list[float]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    tau: float
    f1_at_tau: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def pr_csv(self) -> str:
        rows = ["tau,recall,precision,f1\n"]
        rows += [f"{t!r},{r!r},{p!r},{f!r}\n" for t, r, p, f in
                 zip(self.taus, self.recall, self.precision, self.f1)]
        return "".join(rows)


def _prf(tp, fp, fn):
    # no predicted positives counts as precision 1
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def eval_pixels(prob_maps: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray],
                taus: Sequence[float] | None = None, tau: float = 0.5) -> PixelReport:
    """Pixel PR over a tau sweep, counts pooled across all pairs."""
    if taus is None:
        taus = np.round(np.linspace(0.0, 1.0, 21), 10).tolist()
    taus = sorted(set(float(t) for t in taus) | {float(tau)})
    counts = np.zeros((len(taus), 3))
    for pm, gt in zip(prob_maps, gt_masks, strict=True):
        pm = getattr(pm, "probs", pm)
        if pm.shape != gt.shape:
            raise ValueError(f"probability map {pm.shape} and mask {gt.shape} differ in size")
        gt = gt.astype(bool)
        for i, t in enumerate(taus):
            pred = pm >= t
            tp = np.count_nonzero(pred & gt)
            counts[i] += (tp, np.count_nonzero(pred) - tp, np.count_nonzero(gt) - tp)
    prf = [_prf(*c) for c in counts]
    k = taus.index(float(tau))
    return PixelReport(taus, [x[0] for x in prf], [x[1] for x in prf], [x[2] for x in prf],
                       float(tau), prf[k][2])


# -- grasp ----------------------------------------------------------------

@dataclass
class GraspReport:
    classes: list
    per_class: list[float]
    overall: float
    # rows = truth, columns = prediction, in ``classes`` order
    confusion: list[list[int]]
    counts: list[int]

    def to_dict(self) -> dict:
        return {"classes": [str(c) for c in self.classes], "per_class": self.per_class,
                "overall": self.overall, "confusion": self.confusion, "counts": self.counts}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self, names: Sequence[str] | None = None, row: str = "") -> str:
        names = list(names) if names is not None else [str(c) for c in self.classes]
        heads = [f"{n} Accuracy" for n in names] + ["Overall Accuracy"]
        vals = [f"{a:.3f}" for a in self.per_class] + [f"{self.overall:.3f}"]
        width = max(len(h) for h in heads) + 2
        lines = ["Features Used".ljust(24) + "".join(h.rjust(width) for h in heads),
                 (row or "-").ljust(24) + "".join(v.rjust(width) for v in vals)]
        return "\n".join(lines) + "\n"


def eval_grasp(preds: Sequence[Hashable], truth: Sequence[Hashable],
               classes: Sequence[Hashable] | None = None) -> GraspReport:
    if len(preds) != len(truth):
        raise ValueError("predictions and truth differ in length")
    if not truth:
        raise ValueError("nothing to evaluate")
    if classes is None:
        seen = []
        for c in list(truth) + list(preds):
            if c not in seen:
                seen.append(c)
        classes = seen
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    for p, t in zip(preds, truth):
        conf[index[t], index[p]] += 1
    counts = conf.sum(axis=1)
    per = [float(conf[i, i] / counts[i]) if counts[i] else float("nan") for i in range(len(classes))]
    overall = float(np.trace(conf) / conf.sum())
    return GraspReport(classes, per, overall, conf.tolist(), counts.tolist())


def load_detections_with_fields(path):
    """Detections file as ``{image: [(box, record), ...]}``."""
    out: dict[str, list[tuple[ScoredBox, dict]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            image, box, rec = parse_box_line(line, lineno)
            out.setdefault(image, []).append((box, rec))
    return out

