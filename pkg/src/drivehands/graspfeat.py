"""Grasp features: HOG on masked hand chips, jitter augmentation, PCA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import ScoredBox, rasterize, to_gray
from .refine import HandInstance, extract_hand_instance


@dataclass(frozen=True)
class HOGParams:
    cell: int = 8
    block: int = 16
    stride: int = 8
    bins: int = 9
    signed: bool = False
    eps: float = 1e-6

    def __post_init__(self):
        if self.block % self.cell:
            raise ValueError("block must be a multiple of cell")
        if self.stride % self.cell or self.stride > self.block:
            raise ValueError("stride must be a cell multiple no larger than block")

    def length(self, width: int = 128, height: int = 128) -> int:
        bc, sc = self.block // self.cell, self.stride // self.cell
        ny = (height // self.cell - bc) // sc + 1
        nx = (width // self.cell - bc) // sc + 1
        return ny * nx * bc * bc * self.bins


def hog(chip: np.ndarray, params: HOGParams = HOGParams(), size: int | None = 128) -> np.ndarray:
    """Histogram of oriented gradients of a gray (or RGB) chip.

    Centred [-1, 0, 1] gradients with replicated borders, orientation votes
    split linearly between the two nearest bin centres, per-block L2
    normalisation ``v / sqrt(|v|^2 + eps^2)``.
    """
    gray = to_gray(chip)
    h, w = gray.shape
    if size is not None and (h, w) != (size, size):
        raise ValueError(f"expected a {size}x{size} chip, got {w}x{h}")
    if h % params.cell or w % params.cell or min(h, w) < params.block:
        raise ValueError("chip size must be a multiple of the cell size and at least one block")
    g = np.pad(gray, 1, mode="edge")
    gx = g[1:-1, 2:] - g[1:-1, :-2]
    gy = g[2:, 1:-1] - g[:-2, 1:-1]
    mag = np.hypot(gx, gy)
    span = 360.0 if params.signed else 180.0
    ang = np.degrees(np.arctan2(gy, gx)) % span
    pos = ang / (span / params.bins) - 0.5
    fl = np.floor(pos)
    frac = pos - fl
    lo = fl.astype(int) % params.bins
    hi = (lo + 1) % params.bins
    w_lo, w_hi = mag * (1 - frac), mag * frac
    ncy, ncx = h // params.cell, w // params.cell
    cells = np.empty((ncy, ncx, params.bins))
    for k in range(params.bins):
        plane = np.where(lo == k, w_lo, 0.0) + np.where(hi == k, w_hi, 0.0)
        cells[..., k] = plane.reshape(ncy, params.cell, ncx, params.cell).sum(axis=(1, 3))
    bc, sc = params.block // params.cell, params.stride // params.cell
    win = sliding_window_view(cells, (bc, bc), axis=(0, 1))[::sc, ::sc]
    # (by, bx, bins, cy, cx) -> (by, bx, cy, cx, bins)
    blocks = win.transpose(0, 1, 3, 4, 2).reshape(win.shape[0], win.shape[1], -1)
    norm = np.sqrt((blocks ** 2).sum(axis=-1, keepdims=True) + params.eps ** 2)
    return (blocks / norm).ravel()


def hog_block_size(params: HOGParams = HOGParams()) -> int:
    return (params.block // params.cell) ** 2 * params.bins


def hog_batch(chips, params: HOGParams = HOGParams()) -> np.ndarray:
    return np.stack([hog(c, params) for c in chips])


# -- jitter ---------------------------------------------------------------

def _place_mask(inst: HandInstance, width: int, height: int) -> np.ndarray:
    full = np.zeros((height, width), dtype=bool)
    x0, y0, x1, y1 = rasterize(inst.box, width, height)
    full[y0:y1, x0:x1] = inst.mask
    return full


def jitter(instance: HandInstance, image: np.ndarray, n: int = 5,
           scale_range=(0.9, 1.1), shift_range: float = 0.1, seed: int = 0,
           full_mask: np.ndarray | None = None, max_tries: int = 10) -> list[HandInstance]:
    """Scale/translation augmentation of one hand instance.

    The first output is ``instance`` itself. The others resample the source
    box (uniform scale in ``scale_range``, uniform shift up to
    ``shift_range`` times the box size) and re-extract the chip. Candidates
    leaving the frame are redrawn up to ``max_tries`` times, then clamped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h, w = image.shape[:2]
    if full_mask is None:
        full_mask = _place_mask(instance, w, h)
    rng = np.random.default_rng(seed)
    b = instance.box
    cx, cy = b.x + b.w / 2, b.y + b.h / 2
    out = [instance]
    for _ in range(n - 1):
        cand = None
        for _ in range(max_tries):
            s = rng.uniform(scale_range[0], scale_range[1])
            dx = rng.uniform(-shift_range, shift_range) * b.w
            dy = rng.uniform(-shift_range, shift_range) * b.h
            nw, nh = b.w * s, b.h * s
            cand = ScoredBox(cx + dx - nw / 2, cy + dy - nh / 2, nw, nh, b.score)
            if cand.x >= 0 and cand.y >= 0 and cand.x2 <= w and cand.y2 <= h:
                break
        x0, y0 = max(cand.x, 0.0), max(cand.y, 0.0)
        cand = ScoredBox(x0, y0, min(cand.x2, float(w)) - x0, min(cand.y2, float(h)) - y0, b.score)
        rx0, ry0, rx1, ry1 = rasterize(cand, w, h)
        mask = full_mask[ry0:ry1, rx0:rx1]
        if not mask.any():
            cand, mask = b, instance.mask
        out.append(extract_hand_instance(image, cand, mask.copy(), instance.image_id, instance.skin))
    return out


# -- PCA ------------------------------------------------------------------

@dataclass
class PCAModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (d, D), orthonormal rows
    explained_variance: np.ndarray  # (d,), non-increasing

    @property
    def dim(self) -> int:
        return self.components.shape[0]

    def transform(self, x) -> np.ndarray:
        return pca_transform(self, x)

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PCAModel":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["components"], dtype=np.float64).reshape(len(d["explained_variance"]), -1),
                   np.asarray(d["explained_variance"], dtype=np.float64))


def pca_fit(X, d: int = 30) -> PCAModel:
    """Top-``d`` principal axes via SVD of the centred data.

    Each component is signed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, D = X.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if not 1 <= d <= min(n - 1, D):
        raise ValueError(f"d={d} too large for {n} samples of dimension {D}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:d].copy()
    lead = comps[np.arange(d), np.argmax(np.abs(comps), axis=1)]
    comps *= np.where(lead < 0, -1.0, 1.0)[:, None]
    return PCAModel(mean, comps, s[:d] ** 2 / (n - 1))


def pca_transform(model: PCAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"expected vectors of length {model.mean.shape[0]}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components.T
