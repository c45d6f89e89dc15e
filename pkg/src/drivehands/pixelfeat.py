"""Local per-pixel appearance descriptors and global HSV histograms.

Descriptor layout (134 values by default)::

    [R, G, B] / 255, H / 360, S, V, SIFT x 128, (+ L/100, a/128, b/128 with LAB)

SIFT is computed on a fixed-scale, unrotated 16x16 window on a strided grid;
pixels between grid points borrow the nearest grid descriptor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import rgb_to_hsv, rgb_to_lab, to_gray

SIFT_CELLS = 4
SIFT_ORIENTATIONS = 8
SIFT_DIM = SIFT_CELLS * SIFT_CELLS * SIFT_ORIENTATIONS
COLOR_DIM = 6
LAB_DIM = 3
NORM_EPS = 1e-8
CLIP = 0.2


def descriptor_length(use_lab: bool = False) -> int:
    return COLOR_DIM + SIFT_DIM + (LAB_DIM if use_lab else 0)


@dataclass
class DescriptorGrid:
    grid_w: int
    grid_h: int
    stride: int
    # pixel offset of the first grid point (the centre of the first window)
    offset: int
    descriptors: np.ndarray  # (grid_h * grid_w, D)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ys = self.offset + self.stride * np.arange(self.grid_h)
        xs = self.offset + self.stride * np.arange(self.grid_w)
        return ys, xs


def global_hsv_histogram(img: np.ndarray, bins=(8, 8, 8)) -> np.ndarray:
    """L1-normalised joint HSV histogram, flattened in (h, s, v) order."""
    hb, sb, vb = bins
    if min(bins) < 1:
        raise ValueError("bin counts must be >= 1")
    hsv = rgb_to_hsv(img).reshape(-1, 3)
    hi = np.minimum((hsv[:, 0] / 360.0 * hb).astype(int), hb - 1)
    si = np.minimum((hsv[:, 1] * sb).astype(int), sb - 1)
    vi = np.minimum((hsv[:, 2] * vb).astype(int), vb - 1)
    flat = (hi * sb + si) * vb + vi
    hist = np.bincount(flat, minlength=hb * sb * vb).astype(np.float64)
    return hist / hist.sum()


def _orientation_planes(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude split over 8 orientation planes by linear interpolation."""
    g = np.pad(gray, 1, mode="edge")
    gx = (g[1:-1, 2:] - g[1:-1, :-2]) * 0.5
    gy = (g[2:, 1:-1] - g[:-2, 1:-1]) * 0.5
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx) % (2 * np.pi)
    pos = theta / (2 * np.pi / SIFT_ORIENTATIONS)
    lo = np.floor(pos).astype(int) % SIFT_ORIENTATIONS
    frac = pos - np.floor(pos)
    hi = (lo + 1) % SIFT_ORIENTATIONS
    w_lo = mag * (1 - frac)
    w_hi = mag * frac
    planes = np.empty(gray.shape + (SIFT_ORIENTATIONS,))
    for k in range(SIFT_ORIENTATIONS):
        planes[..., k] = np.where(lo == k, w_lo, 0.0) + np.where(hi == k, w_hi, 0.0)
    return planes


def _spatial_weights(patch: int) -> np.ndarray:
    """Bilinear weight of each window pixel to each of the 4 cell centres."""
    cell = patch / SIFT_CELLS
    centers = (np.arange(SIFT_CELLS) + 0.5) * cell - 0.5
    d = np.abs(np.arange(patch)[None, :] - centers[:, None]) / cell
    return np.clip(1.0 - d, 0.0, None)  # (4, patch)


def _normalize_sift(desc: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(desc, axis=-1, keepdims=True)
    ok = norm >= NORM_EPS
    out = np.where(ok, desc / np.where(ok, norm, 1.0), 0.0)
    out = np.minimum(out, CLIP)
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    ok = norm >= NORM_EPS
    return np.where(ok, out / np.where(ok, norm, 1.0), 0.0)


def dense_sift(gray: np.ndarray, stride: int = 2, patch: int = 16) -> DescriptorGrid:
    """128-d SIFT-like descriptors on a regular grid of ``patch`` windows.

    Windows start at pixel 0 and step by ``stride``; the grid is
    ``(H - patch) // stride + 1`` by ``(W - patch) // stride + 1``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = gray.shape
    if patch > min(h, w):
        raise ValueError("patch exceeds image")
    planes = _orientation_planes(np.asarray(gray, dtype=np.float64))
    wts = _spatial_weights(patch)
    # (H, Gx, 8, patch) -> (H, Gx, 8, 4)
    win_x = sliding_window_view(planes, patch, axis=1)[:, ::stride]
    acc_x = np.einsum("hgop,cp->hgoc", win_x, wts, optimize=True)
    # (Gy, Gx, 8, 4, patch) -> (Gy, Gx, 4y, 4x, 8)
    win_y = sliding_window_view(acc_x, patch, axis=0)[::stride]
    desc = np.einsum("ygocp,rp->ygrco", win_y, wts, optimize=True)
    gh, gw = desc.shape[:2]
    desc = _normalize_sift(desc.reshape(gh, gw, SIFT_DIM))
    return DescriptorGrid(gw, gh, stride, patch // 2, desc.reshape(gh * gw, SIFT_DIM))


def color_channels(pixels: np.ndarray, use_lab: bool = False) -> np.ndarray:
    """Scaled RGB + HSV (+ LAB) channels for ``(..., 3)`` uint8 pixels."""
    rgb = np.asarray(pixels, dtype=np.float64) / 255.0
    hsv = rgb_to_hsv(pixels)
    hsv[..., 0] /= 360.0
    parts = [rgb, hsv]
    if use_lab:
        lab = rgb_to_lab(pixels)
        parts.append(lab / np.array([100.0, 128.0, 128.0]))
    return np.concatenate(parts, axis=-1)


def pixel_descriptors(img: np.ndarray, stride: int = 2, patch: int = 16,
                      use_lab: bool = False) -> DescriptorGrid:
    """Descriptors sampled at the SIFT grid centres (colour of the centre pixel)."""
    sift = dense_sift(to_gray(img), stride, patch)
    ys, xs = sift.centers()
    colors = color_channels(img[ys][:, xs], use_lab).reshape(-1, descriptor_length(use_lab) - SIFT_DIM)
    desc = _assemble(colors, sift.descriptors, use_lab)
    return DescriptorGrid(sift.grid_w, sift.grid_h, stride, sift.offset, desc)


def _assemble(colors: np.ndarray, sift: np.ndarray, use_lab: bool) -> np.ndarray:
    parts = [colors[:, :COLOR_DIM], sift]
    if use_lab:
        parts.append(colors[:, COLOR_DIM:])
    return np.concatenate(parts, axis=1)


def nearest_grid_index(n_pixels: int, offset: int, stride: int, n_grid: int) -> np.ndarray:
    idx = np.floor((np.arange(n_pixels) - offset) / stride + 0.5).astype(int)
    return np.clip(idx, 0, n_grid - 1)


def dense_pixel_descriptors(img: np.ndarray, stride: int = 2, patch: int = 16,
                            use_lab: bool = False, rows=None, cols=None):
    """Per-pixel descriptors: own colour plus the nearest grid SIFT.

    With ``rows``/``cols`` given only those pixels are returned. Images
    smaller than the SIFT window get zeroed SIFT dims; the second return
    value flags that fallback.
    """
    h, w = img.shape[:2]
    if rows is None:
        rows, cols = (a.ravel() for a in np.indices((h, w)))
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    colors = color_channels(img[rows, cols], use_lab)
    if patch > min(h, w):
        sift = np.zeros((len(rows), SIFT_DIM))
        fallback = True
    else:
        grid = dense_sift(to_gray(img), stride, patch)
        gy = nearest_grid_index(h, grid.offset, stride, grid.grid_h)[rows]
        gx = nearest_grid_index(w, grid.offset, stride, grid.grid_w)[cols]
        sift = grid.descriptors[gy * grid.grid_w + gx]
        fallback = False
    return _assemble(colors, sift, use_lab), fallback
