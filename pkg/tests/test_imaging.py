import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from occlubench import imaging
from occlubench.imaging import (DegeneratePolygonError, MalformedHeaderError, UnsupportedDepthError,
                                blit_textured, fill_polygon, gaussian_blur, gaussian_blur_float,
                                load_image, resize_bilinear, save_image, to_grayscale)


def naive_inside(x, y, poly):
    """Plain-Python even-odd test, one point at a time."""
    inside = False
    n = len(poly)
    for k in range(n):
        (xi, yi), (xj, yj) = poly[k], poly[k - 1]
        if (yi > y) != (yj > y):
            if x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
    return inside


def test_load_p6_exact(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n2 2\n255\n" + bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]))
    img = load_image(p)
    assert img.shape == (2, 2, 3)
    assert img.tolist() == [[[255, 0, 0], [0, 255, 0]], [[0, 0, 255], [255, 255, 255]]]


def test_load_p5_gray(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5 1 1 255\n" + bytes([128]))
    img = load_image(p)
    assert img.shape == (1, 1) and img[0, 0] == 128


def test_header_comments_are_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n1 1\n255\n" + bytes([7]))
    assert load_image(p)[0, 0] == 7


@pytest.mark.parametrize("payload", [b"P6\n2 2", b"P6\n2", b"", b"P3\n1 1\n255\n0 0 0", b"P6 x 2 255\n"])
def test_malformed_header(tmp_path, payload):
    p = tmp_path / "bad.ppm"
    p.write_bytes(payload)
    with pytest.raises(MalformedHeaderError, match="malformed header"):
        load_image(p)


def test_unsupported_depth_is_distinct(tmp_path):
    p = tmp_path / "deep.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n" + bytes([0, 1]))
    with pytest.raises(UnsupportedDepthError):
        load_image(p)


def test_missing_file():
    with pytest.raises(imaging.ImageFormatError):
        load_image("/nonexistent/frame.ppm")


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 7), st.integers(1, 7), st.sampled_from([1, 3]))))
def test_ppm_round_trip(tmp_path_factory, arr):
    img = arr[..., 0] if arr.shape[2] == 1 else arr
    p = tmp_path_factory.mktemp("rt") / "x.ppm"
    save_image(p, img)
    back = load_image(p)
    assert back.dtype == np.uint8 and np.array_equal(back, img)
    save_image(p, back)
    assert np.array_equal(load_image(p), img)


def test_grayscale_values():
    img = np.array([[[255, 255, 255], [255, 0, 0]]], dtype=np.uint8)
    assert to_grayscale(img).tolist() == [[255, 76]]


def test_grayscale_identity_on_gray():
    g = np.arange(12, dtype=np.uint8).reshape(3, 4)
    out = to_grayscale(g)
    assert np.array_equal(out, g) and out is not g


def test_resize_identity_and_constant():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    assert np.array_equal(resize_bilinear(img, 64, 64), img)
    const = np.full((13, 7, 3), 91, np.uint8)
    assert np.all(resize_bilinear(const, 20, 5) == 91)


def test_resize_hand_computed():
    # source x = (i + .5) * 2/4 - .5 -> -.25 (clamped 0), .25, .75, 1.25 (clamped 1)
    src = np.array([[0, 255]], dtype=np.uint8)
    assert resize_bilinear(src, 4, 1).tolist() == [[0, 64, 191, 255]]


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))),
       st.integers(1, 15), st.integers(1, 15))
def test_resize_within_input_range(img, w, h):
    out = resize_bilinear(img, w, h)
    assert out.shape == (h, w)
    assert out.min() >= img.min() and out.max() <= img.max()


def test_blur_constant_is_exact():
    img = np.full((11, 9), 77, np.uint8)
    assert np.array_equal(gaussian_blur(img, 1.3), img)


def test_blur_impulse_matches_outer_product():
    sigma = 0.5
    x = np.arange(-2, 3)  # radius ceil(1.5) = 2
    k = np.exp(-x ** 2 / (2 * sigma ** 2))
    k /= k.sum()
    img = np.zeros((9, 9))
    img[4, 4] = 1.0
    out = gaussian_blur_float(img, sigma)
    expect = np.zeros((9, 9))
    expect[2:7, 2:7] = np.outer(k, k)
    np.testing.assert_allclose(out, expect, atol=1e-15)
    u8 = np.zeros((9, 9), np.uint8)
    u8[4, 4] = 255
    assert np.array_equal(gaussian_blur(u8, sigma), np.floor(255 * expect + 0.5).astype(np.uint8))


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_blur_rejects_nonpositive_sigma(sigma):
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((3, 3), np.uint8), sigma)


def test_blur_preserves_mean_away_from_borders():
    rng = np.random.default_rng(1)
    sigma = 1.0
    img = np.full((40, 40), 100.0)
    img[8:32, 8:32] = rng.uniform(0, 255, (24, 24))  # border band wider than the kernel radius
    out = gaussian_blur_float(img, sigma)
    assert abs(out.mean() - img.mean()) <= 1e-6 * img.mean()


def test_fill_alpha_zero_is_noop():
    img = np.random.default_rng(2).integers(0, 256, (10, 10, 3), dtype=np.uint8)
    out = fill_polygon(img, [(1, 1), (8, 1), (5, 9)], (0, 0, 0), 0.0)
    assert np.array_equal(out, img)


def test_fill_full_rectangle_black():
    img = np.full((6, 8, 3), 200, np.uint8)
    out = fill_polygon(img, [(0, 0), (8, 0), (8, 6), (0, 6)], (0, 0, 0), 1.0)
    assert np.all(out == 0)


def test_fill_half_blend():
    img = np.full((4, 4), 200, np.uint8)
    out = fill_polygon(img, [(0, 0), (4, 0), (4, 4), (0, 4)], (0, 0, 0), 0.5)
    assert np.all(out == 100)


def test_fill_rejects_degenerate():
    with pytest.raises(DegeneratePolygonError):
        fill_polygon(np.zeros((4, 4), np.uint8), [(0, 0), (3, 3)], (1, 1, 1), 1.0)


polygons = st.lists(st.tuples(st.floats(-2, 14), st.floats(-2, 14)), min_size=3, max_size=7)


@settings(max_examples=60, deadline=None)
@given(polygons, st.floats(0, 1))
def test_fill_touches_exactly_inside_pixels(poly, alpha):
    img = np.random.default_rng(3).integers(0, 256, (12, 12, 3), dtype=np.uint8)
    out = fill_polygon(img, poly, (10, 250, 30), alpha)
    for r in range(12):
        for c in range(12):
            if not naive_inside(c + 0.5, r + 0.5, poly):
                assert np.array_equal(out[r, c], img[r, c])


def test_polygon_mask_agrees_with_naive_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        poly = [tuple(p) for p in rng.uniform(-3, 19, (int(rng.integers(3, 9)), 2))]
        m = imaging.polygon_mask(poly, 16, 16)
        naive = np.array([[naive_inside(c + 0.5, r + 0.5, poly) for c in range(16)] for r in range(16)])
        assert np.array_equal(m, naive)


def test_blit_white_without_shading_equals_fill():
    img = np.random.default_rng(5).integers(0, 256, (20, 20, 3), dtype=np.uint8)
    poly = [(2.2, 3.1), (17.5, 4.0), (15.0, 18.2), (4.1, 16.0)]
    white = np.full((8, 8, 3), 255, np.uint8)
    assert np.array_equal(blit_textured(img, poly, white, shading=False),
                          fill_polygon(img, poly, (255, 255, 255), 1.0))


def test_blit_shading_bottom_row():
    img = np.zeros((12, 12, 3), np.uint8)
    poly = [(2, 2), (10, 2), (10, 10), (2, 10)]
    white = np.full((4, 4, 3), 255, np.uint8)
    out = blit_textured(img, poly, white, shading=True)
    assert np.all(out[2, 2:10] == 255)
    assert np.all(out[9, 2:10] == 153)
    # outside untouched
    assert np.all(out[:2] == 0) and np.all(out[10:] == 0) and np.all(out[:, :2] == 0)


def test_blit_requires_rgb_texture():
    with pytest.raises(ValueError):
        blit_textured(np.zeros((5, 5, 3), np.uint8), [(0, 0), (4, 0), (4, 4)], np.zeros((3, 3), np.uint8))
