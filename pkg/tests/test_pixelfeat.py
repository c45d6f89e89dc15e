import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drivehands.imagecore import rgb_to_hsv, rgb_to_lab, to_gray
from drivehands.pixelfeat import (
    SIFT_DIM,
    _normalize_sift,
    _orientation_planes,
    _spatial_weights,
    dense_pixel_descriptors,
    dense_sift,
    descriptor_length,
    global_hsv_histogram,
    pixel_descriptors,
)


def test_histogram_constant_image():
    img = np.full((5, 7, 3), (200, 120, 90), np.uint8)
    h = global_hsv_histogram(img)
    assert h.shape == (512,) and h.max() == 1.0 and np.count_nonzero(h) == 1


def test_histogram_red_green():
    img = np.zeros((4, 4, 3), np.uint8)
    img[:, :2] = (255, 0, 0)
    img[:, 2:] = (0, 255, 0)
    h = global_hsv_histogram(img)
    nz = np.flatnonzero(h)
    assert h[nz].tolist() == [0.5, 0.5]
    # flat index is (hi * 8 + si) * 8 + vi; red -> hue cell 0, green (120 deg) -> cell 2
    assert nz.tolist() == [(0 * 8 + 7) * 8 + 7, (2 * 8 + 7) * 8 + 7]


@given(arrays(np.uint8, (6, 5, 3)), st.randoms(use_true_random=False))
def test_histogram_normalised_and_permutation_invariant(img, rnd):
    h = global_hsv_histogram(img, (4, 3, 5))
    assert h.shape == (60,) and (h >= 0).all() and h.sum() == pytest.approx(1.0)
    flat = img.reshape(-1, 3).copy()
    idx = list(range(len(flat)))
    rnd.shuffle(idx)
    np.testing.assert_array_equal(global_hsv_histogram(flat[idx].reshape(img.shape), (4, 3, 5)), h)


def test_histogram_rejects_zero_bins():
    with pytest.raises(ValueError):
        global_hsv_histogram(np.zeros((2, 2, 3), np.uint8), (0, 8, 8))


def test_sift_constant_image_is_zero():
    g = dense_sift(np.full((20, 24), 0.4), stride=2, patch=16)
    assert not g.descriptors.any()


def test_sift_grid_shape_and_norms():
    rng = np.random.default_rng(0)
    g = dense_sift(rng.random((33, 40)), stride=3, patch=16)
    assert (g.grid_h, g.grid_w) == ((33 - 16) // 3 + 1, (40 - 16) // 3 + 1)
    assert g.descriptors.shape == (g.grid_h * g.grid_w, SIFT_DIM)
    norms = np.linalg.norm(g.descriptors, axis=1)
    assert np.all((norms == 0) | (np.abs(norms - 1) < 1e-6))
    assert g.descriptors.max() <= 1.0


def test_sift_patch_exceeds_image():
    with pytest.raises(ValueError, match="patch exceeds image"):
        dense_sift(np.zeros((10, 30)), 2, 16)


def test_sift_vertical_step_edge():
    patch = np.zeros((16, 16))
    patch[:, 8:] = 1.0
    d = dense_sift(patch, 1, 16).descriptors[0].reshape(4, 4, 8)
    mass = d.sum(axis=(0, 1))
    # gradient points along +x (0 degrees): bin 0 and its neighbours hold everything
    assert mass.argmax() == 0
    assert mass[[7, 0, 1]].sum() / mass.sum() > 0.99


def test_sift_matches_direct_window_computation():
    """Oracle: recompute each descriptor from an explicit window loop."""
    rng = np.random.default_rng(3)
    gray = rng.random((27, 31))
    grid = dense_sift(gray, 3, 16)
    planes = _orientation_planes(gray)
    w = _spatial_weights(16)
    for gy in range(grid.grid_h):
        for gx in range(grid.grid_w):
            win = planes[3 * gy:3 * gy + 16, 3 * gx:3 * gx + 16]
            raw = np.einsum("yxo,ry,cx->rco", win, w, w).ravel()
            np.testing.assert_allclose(grid.descriptors[gy * grid.grid_w + gx], _normalize_sift(raw), atol=1e-12)


def test_sift_luminance_invariance():
    rng = np.random.default_rng(4)
    gray = rng.random((24, 24))
    a = dense_sift(gray, 2, 16).descriptors
    np.testing.assert_allclose(dense_sift(gray + 0.3, 2, 16).descriptors, a, atol=1e-6)
    np.testing.assert_allclose(dense_sift(0.5 * gray + 0.25, 2, 16).descriptors, a, atol=1e-6)


def test_descriptor_length():
    assert descriptor_length() == 134 and descriptor_length(True) == 137
    img = np.random.default_rng(5).integers(0, 256, (20, 20, 3), dtype=np.uint8)
    assert pixel_descriptors(img).descriptors.shape[1] == 134
    assert pixel_descriptors(img, use_lab=True).descriptors.shape[1] == 137


def test_constant_image_descriptors_identical():
    img = np.full((24, 20, 3), (210, 160, 130), np.uint8)
    d = pixel_descriptors(img).descriptors
    assert (d == d[0]).all()


def test_stride_one_grid_count():
    img = np.zeros((21, 30, 3), np.uint8)
    g = pixel_descriptors(img, stride=1)
    assert (g.grid_w, g.grid_h) == (30 - 16 + 1, 21 - 16 + 1)
    assert len(g.descriptors) == g.grid_w * g.grid_h


def test_color_channels_consistent_with_imagecore():
    img = np.random.default_rng(6).integers(0, 256, (22, 26, 3), dtype=np.uint8)
    g = pixel_descriptors(img, stride=2, use_lab=True)
    ys, xs = g.centers()
    px = img[ys][:, xs].reshape(-1, 3)
    hsv = rgb_to_hsv(px)
    np.testing.assert_allclose(g.descriptors[:, :3], px / 255.0)
    np.testing.assert_allclose(g.descriptors[:, 3:6], hsv / [360.0, 1.0, 1.0])
    np.testing.assert_allclose(g.descriptors[:, -3:], rgb_to_lab(px) / [100.0, 128.0, 128.0])
    assert (g.descriptors[:, :6] >= 0).all() and (g.descriptors[:, :6] <= 1).all()


def test_dense_descriptors_use_nearest_grid_sift():
    img = np.random.default_rng(7).integers(0, 256, (30, 34, 3), dtype=np.uint8)
    X, fallback = dense_pixel_descriptors(img, 2, 16)
    assert not fallback and X.shape == (30 * 34, 134)
    grid = dense_sift(to_gray(img), 2, 16)
    ys, xs = grid.centers()
    # a pixel sitting on a grid centre carries exactly that descriptor
    r, c = ys[2], xs[3]
    np.testing.assert_array_equal(X[r * 34 + c, 6:], grid.descriptors[2 * grid.grid_w + 3])


def test_dense_descriptors_small_region_fallback():
    img = np.full((8, 9, 3), 128, np.uint8)
    X, fallback = dense_pixel_descriptors(img)
    assert fallback and X.shape == (72, 134) and not X[:, 6:].any()
