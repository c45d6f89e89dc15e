"""Proposal refinement with the pixel skin classifier.

Skin is searched only inside a slightly enlarged proposal. Proposals with too
little skin are rejected; survivors are tightened around the largest skin
component and turned into background-zeroed 128x128 hand chips.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .illumskin import IlluminationModelBank, predict_skin, threshold_mask
from .imagecore import (
    ScoredBox,
    clamp_box,
    crop,
    expand_box,
    label_components,
    rasterize,
    resize_bilinear,
    resize_nearest,
    write_image,
    write_mask,
)

CHIP_SIZE = 128


@dataclass(frozen=True)
class RefineParams:
    margin: float = 0.15
    f_min: float = 0.02
    pad: float = 0.05
    tau: float = 0.5
    blend_n: int = 1


@dataclass
class Refinement:
    box: ScoredBox
    # mask over the rasterized refined box
    mask: np.ndarray
    # mean skin probability over the mask pixels
    skin: float
    search_box: ScoredBox


@dataclass
class HandInstance:
    image_id: str
    box: ScoredBox
    mask: np.ndarray
    chip: np.ndarray  # (128, 128, 3), zero outside the mask
    skin: float = 0.0
    # same crop without masking; used for the unmasked-feature baseline
    raw_chip: np.ndarray | None = field(default=None, repr=False)


def refine_detection(img: np.ndarray, box: ScoredBox, bank: IlluminationModelBank,
                     params: RefineParams = RefineParams()) -> Refinement | None:
    h, w = img.shape[:2]
    search = clamp_box(expand_box(box, params.margin), 0.0, 0.0, float(w), float(h))
    x0, y0, x1, y1 = rasterize(search, w, h)
    pm = predict_skin(img[y0:y1, x0:x1], bank, params.blend_n)
    labels, comps = label_components(threshold_mask(pm, params.tau))
    if not comps:
        return None
    top = comps[0]
    if top.size / ((x1 - x0) * (y1 - y0)) < params.f_min:
        return None
    cx, cy, cw, ch = top.bbox
    tight = ScoredBox(x0 + cx - params.pad * cw, y0 + cy - params.pad * ch,
                      cw * (1 + 2 * params.pad), ch * (1 + 2 * params.pad), box.score)
    refined = clamp_box(tight, search.x, search.y, search.x2, search.y2)
    rx0, ry0, rx1, ry1 = rasterize(refined, w, h)
    comp = labels == top.id
    mask = np.zeros((ry1 - ry0, rx1 - rx0), dtype=bool)
    # refined raster lies inside the search raster
    mask[:] = comp[ry0 - y0:ry1 - y0, rx0 - x0:rx1 - x0]
    skin = float(pm.probs[comp].mean())
    return Refinement(refined, mask, skin, search)


def extract_hand_instance(img: np.ndarray, refined: ScoredBox, mask: np.ndarray,
                          image_id: str = "", skin: float = 0.0,
                          chip_size: int = CHIP_SIZE) -> HandInstance:
    """Crop, zero the background and resize to a square chip.

    The mask is resized by nearest neighbour and re-applied after the
    bilinear resize so background pixels stay exactly zero.
    """
    patch = crop(img, refined)
    if patch.shape[:2] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match box raster {patch.shape[:2]}")
    if not mask.any():
        raise ValueError("empty hand mask")
    masked = np.where(mask[..., None], patch, 0).astype(np.uint8)
    chip = resize_bilinear(masked, chip_size, chip_size)
    chip_mask = resize_nearest(mask, chip_size, chip_size)
    chip[~chip_mask] = 0
    raw = resize_bilinear(patch, chip_size, chip_size)
    return HandInstance(image_id, refined, mask, chip, skin, raw)


def refine_and_extract(img, box, bank, params: RefineParams = RefineParams(),
                       image_id: str = "") -> HandInstance | None:
    r = refine_detection(img, box, bank, params)
    if r is None:
        return None
    return extract_hand_instance(img, r.box, r.mask, image_id, r.skin)


def mask_in_box(full_mask: np.ndarray, box: ScoredBox) -> np.ndarray:
    """Slice a full-frame mask to the raster of ``box``."""
    h, w = full_mask.shape
    x0, y0, x1, y1 = rasterize(box, w, h)
    return full_mask[y0:y1, x0:x1].copy()


def instance_from_mask(img: np.ndarray, box: ScoredBox, full_mask: np.ndarray,
                       image_id: str = "") -> HandInstance:
    """Build an instance from a known full-frame skin mask (e.g. ground truth)."""
    return extract_hand_instance(img, box, mask_in_box(full_mask, box), image_id, 1.0)


def export_instance(directory, name: str, inst: HandInstance) -> None:
    """Write ``name``.png (chip), ``name``_mask.png and ``name``.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_image(d / f"{name}.png", inst.chip)
    write_mask(d / f"{name}_mask.png", inst.mask)
    b = inst.box
    meta = {"image": inst.image_id, "x": b.x, "y": b.y, "w": b.w, "h": b.h,
            "score": b.score, "skin": inst.skin}
    (d / f"{name}.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
