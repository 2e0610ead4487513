import colorsys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sortforge.extraction import (BACKGROUND, FOREGROUND, UNKNOWN, ChromaKeySpec, ExtractionError,
                                  MattingConfig, MattingConvergenceError, chroma_key, extract_region,
                                  make_trimap, matte)
from sortforge.fixtures import known_alpha_fixture, make_capture
from sortforge.geometry import compose, project_mask, Intrinsics
from sortforge.imgcore import dilate, erode, tight_box
from sortforge.metrics import mask_eval
import sortforge.fixtures as fx


def hsv_oracle(img, spec):
    h, w, _ = img.shape
    out = np.zeros((h, w), bool)
    for y in range(h):
        for x in range(w):
            hh, s, v = colorsys.rgb_to_hsv(*(img[y, x] / 255.0))
            d = abs(hh * 360 - spec.key_hue) % 360
            d = min(d, 360 - d)
            out[y, x] = not (d <= spec.hue_tolerance and s >= spec.min_saturation and v >= spec.min_value)
    return out


def test_all_key_color_is_empty():
    img = np.zeros((8, 8, 3), np.uint8)
    img[..., 1] = 200
    assert not chroma_key(img).any()


def test_gray_is_never_keyed():
    img = np.full((8, 8, 3), 128, np.uint8)
    assert chroma_key(img).all()


def test_red_square_on_green():
    img = np.zeros((30, 30, 3), np.uint8)
    img[..., 1] = 255
    img[10:20, 5:15] = (255, 0, 0)
    spec = ChromaKeySpec(key_hue=120, hue_tolerance=20)
    out = chroma_key(img, spec)
    expect = np.zeros((30, 30), bool)
    expect[10:20, 5:15] = True
    assert np.array_equal(out, expect)
    assert np.array_equal(out, hsv_oracle(img, spec))


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, (6, 6, 3)), st.floats(0, 359), st.floats(5, 90))
def test_chroma_key_matches_colorsys(img, hue, tol):
    spec = ChromaKeySpec(key_hue=hue, hue_tolerance=tol)
    assert np.array_equal(chroma_key(img, spec), hsv_oracle(img, spec))


def test_trimap_block():
    m = np.zeros((40, 40), bool)
    m[10:30, 10:30] = True
    t = make_trimap(m, 2)
    assert tight_box(t == FOREGROUND).as_tuple() == (12, 12, 28, 28)
    assert (t == FOREGROUND).sum() == 16 * 16
    assert tight_box(t != BACKGROUND).as_tuple() == (8, 8, 32, 32)
    assert (t != BACKGROUND).sum() == 24 * 24


def test_trimap_band_too_wide():
    m = np.zeros((40, 40), bool)
    m[10:18, 10:30] = True
    with pytest.raises(ExtractionError, match="too thin"):
        make_trimap(m, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_trimap_partitions_image(seed):
    rng = np.random.default_rng(seed)
    m = dilate(rng.random((30, 30)) > 0.97, 4)
    if not erode(m, 3).any():
        return
    t = make_trimap(m, 3)
    fg, unk, bg = t == FOREGROUND, t == UNKNOWN, t == BACKGROUND
    assert np.array_equal(fg.astype(int) + unk + bg, np.ones_like(t, dtype=int))
    assert not (fg & ~m).any()
    assert not (m & ~(fg | unk)).any()


def test_matte_without_unknown_is_trimap():
    t = np.zeros((10, 10), np.uint8)
    t[3:7, 3:7] = FOREGROUND
    a = matte(np.zeros((10, 10, 3), np.uint8), t)
    assert np.array_equal(a, (t == FOREGROUND).astype(float))


def uniform_band_case():
    img = np.full((12, 20, 3), 90, np.uint8)
    t = np.full((12, 20), UNKNOWN, np.uint8)
    t[:, :4] = FOREGROUND
    t[:, 16:] = BACKGROUND
    return img, t


def test_uniform_image_gives_monotone_ramp():
    img, t = uniform_band_case()
    a = matte(img, t)
    assert np.array_equal(a[t == FOREGROUND], np.ones((t == FOREGROUND).sum()))
    assert not a[t == BACKGROUND].any()
    row = a[6, 3:17]
    assert np.all(np.diff(row) <= 1e-6)
    assert row[1] > row[-2]


def test_uniform_brightness_shift_invariance():
    img, t = uniform_band_case()
    a = matte(img, t)
    b = matte(img + 10, t)
    assert np.max(np.abs(a - b)) <= 1e-6


def test_textured_brightness_shift_bound():
    img, alpha, disk = known_alpha_fixture()
    t = make_trimap(disk, 4)
    a = matte(img, t)
    b = matte(np.clip(img.astype(int) + 10, 0, 255).astype(np.uint8), t)
    assert abs(a.mean() - b.mean()) <= 0.02


def test_known_alpha_fixture_error():
    img, alpha, disk = known_alpha_fixture()
    t = make_trimap(disk, 4)
    a = matte(img, t)
    unk = t == UNKNOWN
    assert np.mean(np.abs(a[unk] - alpha[unk])) < 0.08
    assert a.min() >= 0 and a.max() <= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_constraints_are_exact(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (24, 24, 3), dtype=np.uint8)
    m = np.zeros((24, 24), bool)
    y, x = rng.integers(6, 10, 2)
    m[y:y + 10, x:x + 8] = True
    t = make_trimap(m, 2)
    a = matte(img, t)
    assert np.all(a[t == FOREGROUND] == 1.0) and np.all(a[t == BACKGROUND] == 0.0)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_convergence_error_carries_residual():
    img = np.random.default_rng(0).integers(0, 256, (30, 30, 3), dtype=np.uint8)
    m = np.zeros((30, 30), bool)
    m[8:22, 8:22] = True
    with pytest.raises(MattingConvergenceError) as info:
        matte(img, make_trimap(m, 3), MattingConfig(max_iterations=1, tolerance=1e-12))
    assert info.value.residual > 0 and info.value.iterations == 1


def test_consistent_square():
    img = np.zeros((40, 40, 3), np.uint8)
    img[..., 1] = 220
    img[12:28, 10:30] = (200, 30, 30)
    chroma = chroma_key(img)
    ext = extract_region(img, chroma, chroma, band_radius=3)
    assert np.array_equal(ext.mask, chroma)
    assert ext.box.as_tuple() == (10, 12, 30, 28)


def test_final_mask_is_inside_chroma():
    img = np.zeros((40, 40, 3), np.uint8)
    img[..., 1] = 220
    img[12:28, 10:30] = (200, 30, 30)
    chroma = chroma_key(img)
    approx = dilate(chroma, 3)
    inner = erode(chroma, 2)
    ext = extract_region(img, inner, approx, band_radius=2)
    assert not (ext.mask & ~inner).any()


def test_no_object_found():
    img = np.zeros((20, 20, 3), np.uint8)
    m = np.zeros((20, 20), bool)
    m[5:10, 5:10] = True
    with pytest.raises(ExtractionError, match="no object found"):
        extract_region(img, ~m, m)


def test_capture_fixture_excludes_marker():
    rng = np.random.default_rng(4)
    img, gt, marker, obj = make_capture("aluminum_can", 0, rng)
    intr = Intrinsics(fx.FOCAL, (fx.WIDTH - 1) / 2, (fx.HEIGHT - 1) / 2, fx.WIDTH, fx.HEIGHT)
    approx = project_mask(fx.EXTENTS["aluminum_can"], compose(marker, obj), intr)
    chroma = chroma_key(img)
    marker_px = np.zeros_like(gt)
    marker_px[6:22, 6:22] = True
    assert chroma[marker_px].all()  # the marker is not green
    ext = extract_region(img, chroma, approx)
    assert not (ext.mask & marker_px).any()
    _, scores = mask_eval(ext.mask, gt)
    assert scores.iou >= 85.0


def test_extraction_is_deterministic():
    rng = np.random.default_rng(5)
    img, gt, marker, obj = make_capture("glass_bottle", 0, rng)
    intr = Intrinsics(fx.FOCAL, (fx.WIDTH - 1) / 2, (fx.HEIGHT - 1) / 2, fx.WIDTH, fx.HEIGHT)
    approx = project_mask(fx.EXTENTS["glass_bottle"], compose(marker, obj), intr)
    a = extract_region(img, chroma_key(img), approx)
    b = extract_region(img, chroma_key(img), approx)
    assert np.array_equal(a.mask, b.mask) and np.array_equal(a.alpha, b.alpha)
