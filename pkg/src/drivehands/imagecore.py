"""Image primitives shared by every stage of the pipeline.

Images are plain numpy arrays:

* RGB images are ``(H, W, 3)`` ``uint8``
* gray images are ``(H, W)`` floats in ``[0, 1]``
* binary masks are ``(H, W)`` ``bool``

Boxes keep real-valued coordinates; they are rasterized (floor origin, ceil
extent) only when pixels are actually cut out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage


@dataclass(frozen=True)
class ScoredBox:
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"box score must lie in [0, 1], got {self.score}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def with_score(self, score: float) -> "ScoredBox":
        return ScoredBox(self.x, self.y, self.w, self.h, score)


def box_from_corners(x1: float, y1: float, x2: float, y2: float, score: float = 1.0) -> ScoredBox:
    return ScoredBox(x1, y1, x2 - x1, y2 - y1, score)


# -- color spaces -----------------------------------------------------------

def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> HSV for 8-bit input of shape ``(..., 3)``.

    Hue is in degrees ``[0, 360)``; saturation and value in ``[0, 1]``.
    Achromatic pixels get hue 0.
    """
    a = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    v = a.max(axis=-1)
    c = v - a.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h * 60.0, 0.0)
    h = np.where(h >= 360.0, h - 360.0, h)
    return np.stack([h, s, v], axis=-1)


_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB (8-bit) -> CIE-L*a*b* under D65, shape ``(..., 3)``."""
    a = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(a <= 0.04045, a / 12.92, ((a + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _D65_WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a_ = 500.0 * (f[..., 0] - f[..., 1])
    b_ = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a_, b_], axis=-1)


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luminance in [0, 1] (BT.601 weights)."""
    if img.ndim == 2:
        return np.asarray(img, dtype=np.float64)
    rgb = img.astype(np.float64) / 255.0
    return rgb @ np.array([0.299, 0.587, 0.114])


# -- box geometry -----------------------------------------------------------

def iou(a: ScoredBox, b: ScoredBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(boxes: Sequence[ScoredBox], iou_thresh: float) -> list[ScoredBox]:
    """Greedy non-maximum suppression.

    A box survives iff its IoU with every already-kept, higher-scored box is
    at most ``iou_thresh``. Equal scores keep input order.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ValueError("iou_thresh must lie in [0, 1]")
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept: list[ScoredBox] = []
    for i in order:
        cand = boxes[i]
        if all(iou(cand, k) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


def rasterize(box: ScoredBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Clamp ``box`` to the image and snap it outward to the pixel grid.

    Returns ``(x0, y0, x1, y1)`` with exclusive ends; raises on empty results.
    """
    x0 = math.floor(max(box.x, 0.0))
    y0 = math.floor(max(box.y, 0.0))
    x1 = math.ceil(min(box.x2, float(width)))
    y1 = math.ceil(min(box.y2, float(height)))
    if x1 <= x0 or y1 <= y0:
        raise ValueError("empty crop")
    return x0, y0, x1, y1


def clamp_box(box: ScoredBox, x0: float, y0: float, x1: float, y1: float) -> ScoredBox:
    """Intersect ``box`` with the rectangle ``[x0, x1) x [y0, y1)``."""
    nx0, ny0 = max(box.x, x0), max(box.y, y0)
    nx1, ny1 = min(box.x2, x1), min(box.y2, y1)
    if nx1 <= nx0 or ny1 <= ny0:
        raise ValueError("box does not intersect the clamp region")
    return ScoredBox(nx0, ny0, nx1 - nx0, ny1 - ny0, box.score)


def expand_box(box: ScoredBox, ratio: float) -> ScoredBox:
    """Grow each side by ``ratio`` times the box extent along that axis."""
    dx, dy = ratio * box.w, ratio * box.h
    return ScoredBox(box.x - dx, box.y - dy, box.w + 2 * dx, box.h + 2 * dy, box.score)


def crop(img: np.ndarray, box: ScoredBox) -> np.ndarray:
    h, w = img.shape[:2]
    x0, y0, x1, y1 = rasterize(box, w, h)
    return img[y0:y1, x0:x1].copy()


# -- resampling -------------------------------------------------------------

def _corner_aligned(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    ``uint8`` input is rounded back to ``uint8``; float input stays float.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    h, w = img.shape[:2]
    if (w, h) == (out_w, out_h):
        return img.copy()
    src = img.astype(np.float64)
    ys = _corner_aligned(h, out_h)
    xs = _corner_aligned(w, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    if img.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def resize_nearest(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbour resize using pixel-centre mapping (used for masks)."""
    h, w = img.shape[:2]
    ys = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return img[ys][:, xs].copy()


# -- connected components ---------------------------------------------------

class Component(NamedTuple):
    id: int
    size: int
    # (x, y, w, h) in integer pixels
    bbox: tuple[int, int, int, int]


_EIGHT = np.ones((3, 3), dtype=bool)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, list[Component]]:
    """8-connected labelling; ids renumbered 1..n by size, largest first.

    Equal sizes keep raster order of each component's first pixel.
    """
    raw, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if n == 0:
        return np.zeros(raw.shape, dtype=np.int32), []
    sizes = np.bincount(raw.ravel(), minlength=n + 1)[1:]
    slices = ndimage.find_objects(raw)
    order = sorted(range(n), key=lambda i: (-sizes[i], i))
    remap = np.zeros(n + 1, dtype=np.int32)
    comps = []
    for new_id, old in enumerate(order, start=1):
        remap[old + 1] = new_id
        sy, sx = slices[old]
        comps.append(Component(new_id, int(sizes[old]),
                               (sx.start, sy.start, sx.stop - sx.start, sy.stop - sy.start)))
    return remap[raw], comps


def connected_components(mask: np.ndarray) -> list[Component]:
    return label_components(mask)[1]


# -- I/O --------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Read a PNG or binary PPM as ``(H, W, 3)`` uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path, img: np.ndarray) -> None:
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"unsupported image format: {path.suffix}")
    Image.fromarray(np.ascontiguousarray(img)).save(path, format=fmt)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def read_gray(path) -> np.ndarray:
    """Single-channel 8-bit image as ``(H, W)`` uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


IMAGE_SUFFIXES = (".png", ".ppm")


def list_images(directory) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
