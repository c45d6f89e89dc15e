"""Detector proposals: JSON-lines I/O, confidence/NMS filtering and a
skin-blob fallback proposer for running without an external detector.

The fallback is a simple stand-in and is considerably weaker than a trained
ConvNet hand detector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .illumskin import IlluminationModelBank, predict_skin, threshold_mask
from .imagecore import ScoredBox, label_components, nms, resize_bilinear

ProposalSet = dict[str, list[ScoredBox]]

_BOX_KEYS = ("x", "y", "w", "h")


class ProposalFormatError(ValueError):
    pass


def parse_box_line(line: str, lineno: int, need_score: bool = True) -> tuple[str, ScoredBox, dict]:
    """Parse one JSON-lines record; returns ``(image id, box, full record)``."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProposalFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise ProposalFormatError(f"line {lineno}: expected a JSON object")
    image = rec.get("image")
    if not isinstance(image, str) or not image:
        raise ProposalFormatError(f"line {lineno}: 'image' must be a non-empty string")
    keys = _BOX_KEYS + (("score",) if need_score else ())
    vals = {}
    for k in keys:
        v = rec.get(k)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ProposalFormatError(f"line {lineno}: '{k}' must be a number")
        vals[k] = float(v)
    score = vals.get("score", 1.0)
    if not 0.0 <= score <= 1.0:
        raise ProposalFormatError(f"line {lineno}: score {score} outside [0, 1]")
    try:
        box = ScoredBox(vals["x"], vals["y"], vals["w"], vals["h"], score)
    except ValueError as exc:
        raise ProposalFormatError(f"line {lineno}: {exc}") from None
    return image, box, rec


def load_proposals(path) -> ProposalSet:
    out: ProposalSet = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            image, box, _ = parse_box_line(line, lineno)
            out.setdefault(image, []).append(box)
    return out


def box_record(image: str, box: ScoredBox, **extra) -> dict:
    rec = {"image": image, "x": box.x, "y": box.y, "w": box.w, "h": box.h, "score": box.score}
    rec.update(extra)
    return rec


def dump_records(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def save_proposals(path, proposals: ProposalSet) -> None:
    recs = (box_record(img, b) for img, boxes in proposals.items() for b in boxes)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_records(recs))


def filter_proposals(boxes: Sequence[ScoredBox], conf_thresh: float = 0.15,
                     nms_iou: float = 0.45) -> list[ScoredBox]:
    """Drop boxes scoring below ``conf_thresh``, then suppress overlaps."""
    if not 0.0 <= conf_thresh <= 1.0:
        raise ValueError("conf_thresh must lie in [0, 1]")
    return nms([b for b in boxes if b.score >= conf_thresh], nms_iou)


@dataclass(frozen=True)
class FallbackParams:
    max_side: int = 160
    tau: float = 0.5
    # component area in downsampled pixels
    min_area: int = 20
    # total growth per axis; half goes on each side
    pad: float = 0.2
    blend_n: int = 1


def fallback_propose(img: np.ndarray, bank: IlluminationModelBank,
                     params: FallbackParams = FallbackParams()) -> list[ScoredBox]:
    """Whole-frame skin segmentation at low resolution, one box per blob."""
    h, w = img.shape[:2]
    scale = min(1.0, params.max_side / max(h, w))
    if scale < 1.0:
        sw, sh = max(1, round(w * scale)), max(1, round(h * scale))
        small = resize_bilinear(img, sw, sh)
    else:
        sw, sh, small = w, h, img
    pm = predict_skin(small, bank, params.blend_n)
    labels, comps = label_components(threshold_mask(pm, params.tau))
    sx, sy = w / sw, h / sh
    out = []
    for comp in comps:
        if comp.size < params.min_area:
            continue
        cx, cy, cw, ch = comp.bbox
        score = float(np.clip(pm.probs[labels == comp.id].mean(), 0.0, 1.0))
        px, py = cw * params.pad / 2, ch * params.pad / 2
        x0 = max(0.0, (cx - px) * sx)
        y0 = max(0.0, (cy - py) * sy)
        x1 = min(float(w), (cx + cw + px) * sx)
        y1 = min(float(h), (cy + ch + py) * sy)
        out.append(ScoredBox(x0, y0, x1 - x0, y1 - y0, score))
    out.sort(key=lambda b: -b.score)
    return out
