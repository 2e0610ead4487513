import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sortforge.imgcore import (BoundingBox, ImageError, as_image, dilate, erode, largest_component,
                               mask_and, moments, read_image, read_mask, round_half_away, tight_box,
                               write_image, write_mask)

masks = lambda h, w: arrays(bool, (h, w))


def brute_dilate(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            out[y, x] = mask[max(y - r, 0):y + r + 1, max(x - r, 0):x + r + 1].any()
    return out


def brute_erode(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            # outside pixels count as set
            ok = True
            for yy in range(y - r, y + r + 1):
                for xx in range(x - r, x + r + 1):
                    if 0 <= yy < h and 0 <= xx < w and not mask[yy, xx]:
                        ok = False
            out[y, x] = ok
    return out


def flood_fill_sizes(mask):
    seen = np.zeros_like(mask)
    comps = []
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                stack, pix = [(y, x)], []
                seen[y, x] = True
                while stack:
                    cy, cx = stack.pop()
                    pix.append((cy, cx))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                stack.append((ny, nx))
                comps.append(pix)
    return comps


def test_bounding_box_rejects_degenerate():
    with pytest.raises(ImageError):
        BoundingBox(3, 0, 3, 5)
    box = BoundingBox(1, 2, 4, 8)
    assert (box.width, box.height) == (3, 6)
    assert box.center == (2.0, 4.5)


def test_dilate_radius_zero_is_identity():
    rng = np.random.default_rng(0)
    m = rng.random((9, 7)) > 0.5
    assert np.array_equal(dilate(m, 0), m)
    assert np.array_equal(erode(m, 0), m)


def test_dilate_single_pixel():
    m = np.zeros((11, 11), bool)
    m[5, 5] = True
    expect = np.zeros_like(m)
    expect[4:7, 4:7] = True
    assert np.array_equal(dilate(m, 1), expect)


def test_dilate_block_matches_neighborhood_scan():
    m = np.zeros((12, 12), bool)
    m[5:7, 5:7] = True
    out = dilate(m, 2)
    assert np.array_equal(out, brute_dilate(m, 2))
    assert out.sum() == 36


def test_erode_block_to_center():
    m = np.zeros((7, 7), bool)
    m[2:5, 2:5] = True
    expect = np.zeros_like(m)
    expect[3, 3] = True
    assert np.array_equal(erode(m, 1), expect)


def test_erode_random_matches_min_filter():
    m = np.random.default_rng(3).random((16, 16)) > 0.3
    assert np.array_equal(erode(m, 2), brute_erode(m, 2))


def test_negative_radius():
    with pytest.raises(ValueError):
        dilate(np.zeros((3, 3), bool), -1)


@settings(max_examples=40, deadline=None)
@given(masks(32, 32), st.integers(0, 4))
def test_morphology_duality_on_interior(m, r):
    lhs = erode(m, r)
    rhs = ~dilate(~m, r)
    inner = (slice(r, 32 - r), slice(r, 32 - r))
    assert np.array_equal(lhs[inner], rhs[inner])


@settings(max_examples=40, deadline=None)
@given(masks(10, 12), st.integers(0, 3))
def test_dilate_is_superset(m, r):
    assert not (m & ~dilate(m, r)).any()
    assert not (erode(m, r) & ~m).any()


def test_mask_and_identities_and_oracle():
    rng = np.random.default_rng(1)
    a = rng.random((8, 8)) > 0.5
    b = rng.random((8, 8)) > 0.5
    assert np.array_equal(mask_and(a, a), a)
    assert not mask_and(a, np.zeros_like(a)).any()
    out = mask_and(a, b)
    for y in range(8):
        for x in range(8):
            assert out[y, x] == (a[y, x] and b[y, x])
    with pytest.raises(ImageError):
        mask_and(a, np.zeros((8, 9), bool))


@given(masks(6, 6), masks(6, 6), masks(6, 6))
def test_mask_and_commutative_associative(a, b, c):
    assert np.array_equal(mask_and(a, b), mask_and(b, a))
    assert np.array_equal(mask_and(mask_and(a, b), c), mask_and(a, mask_and(b, c)))


def test_moments_square_and_rectangle():
    m = np.zeros((10, 10), bool)
    m[3:7, 3:7] = True
    assert moments(m).centroid == (4.5, 4.5)
    rect = np.zeros((10, 30), bool)
    rect[3:7, 5:25] = True
    assert moments(rect).principal_axis == (1.0, 0.0)


def test_moments_l_shape_centroid():
    m = np.zeros((10, 10), bool)
    m[1:8, 2] = True
    m[7, 2:6] = True
    ys, xs = np.nonzero(m)
    mo = moments(m)
    assert mo.area == len(xs)
    assert mo.centroid == pytest.approx((sum(xs) / len(xs), sum(ys) / len(ys)), abs=1e-12)
    assert np.hypot(*mo.principal_axis) == pytest.approx(1.0, abs=1e-9)


def test_moments_empty():
    with pytest.raises(ImageError, match="empty silhouette"):
        moments(np.zeros((4, 4), bool))


@settings(max_examples=50, deadline=None)
@given(masks(8, 8), st.integers(0, 6), st.integers(0, 6))
def test_moments_translation_equivariant(m, dx, dy):
    if not m.any():
        return
    big = np.zeros((16, 16), bool)
    big[:8, :8] = m
    moved = np.zeros_like(big)
    moved[dy:dy + 8, dx:dx + 8] = m
    a, b = moments(big).centroid, moments(moved).centroid
    assert b[0] - a[0] == pytest.approx(dx, abs=1e-9)
    assert b[1] - a[1] == pytest.approx(dy, abs=1e-9)


def test_largest_component():
    m = np.zeros((12, 12), bool)
    assert not largest_component(m).any()
    m[1:3, 1:6] = True  # 10 px
    m[8, 8:11] = True   # 3 px
    out = largest_component(m)
    comps = flood_fill_sizes(m)
    biggest = max(comps, key=len)
    expect = np.zeros_like(m)
    for y, x in biggest:
        expect[y, x] = True
    assert np.array_equal(out, expect)
    assert out.sum() == 10
    single = np.zeros((5, 5), bool)
    single[1:3, 1:3] = True
    assert np.array_equal(largest_component(single), single)


def test_largest_component_is_8_connected():
    m = np.eye(5, dtype=bool)
    assert np.array_equal(largest_component(m), m)


def test_tight_box():
    m = np.zeros((6, 8), bool)
    assert tight_box(m) is None
    m[2:4, 3:7] = True
    assert tight_box(m).as_tuple() == (3, 2, 7, 4)


def test_round_half_away():
    assert list(round_half_away([0.5, 1.5, 2.5, -0.5, -2.5, 2.49])) == [1, 2, 3, -1, -3, 2]


def test_as_image_rejects_bad_shapes():
    with pytest.raises(ImageError):
        as_image(np.zeros((4, 4), np.uint8))
    with pytest.raises(ImageError):
        as_image(np.zeros((4, 4, 2), np.uint8))


def test_png_ppm_and_mask_round_trip(tmp_path):
    img = np.random.default_rng(2).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    for name in ("a.png", "a.ppm"):
        write_image(tmp_path / name, img)
        assert np.array_equal(read_image(tmp_path / name), img)
    rgba = np.dstack([img, np.full((5, 7), 9, np.uint8)])
    write_image(tmp_path / "b.png", rgba)
    assert np.array_equal(read_image(tmp_path / "b.png"), rgba)
    with pytest.raises(ImageError):
        write_image(tmp_path / "b.ppm", rgba)
    m = img[..., 0] > 100
    write_mask(tmp_path / "m.png", m)
    assert np.array_equal(read_mask(tmp_path / "m.png"), m)
    from PIL import Image
    assert set(np.unique(np.array(Image.open(tmp_path / "m.png")))) <= {0, 255}
