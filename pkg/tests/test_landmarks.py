import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlubench.landmarks import (DegenerateFaceError, FaceOutsideFrameError, FaceTooSmallError,
                                  LandmarkError, LandmarkSet, face_crop, face_hull, parse_landmarks,
                                  write_landmarks)
from occlubench.imaging import resize_bilinear, to_grayscale
from occlubench.synthdata import reference_face_landmarks


def brute_force_hull_area(pts):
    """O(n^3): keep points lying on an edge that has every other point on one side."""
    pts = np.unique(np.asarray(pts, dtype=float), axis=0)
    on_hull = set()
    for i, j in itertools.permutations(range(len(pts)), 2):
        d = pts[j] - pts[i]
        cross = d[0] * (pts[:, 1] - pts[i, 1]) - d[1] * (pts[:, 0] - pts[i, 0])
        if np.all(cross >= -1e-12):
            on_hull.update((i, j))
    hull = pts[sorted(on_hull)]
    c = hull.mean(axis=0)
    hull = hull[np.argsort(np.arctan2(hull[:, 1] - c[1], hull[:, 0] - c[0]))]
    x, y = hull[:, 0], hull[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def square_landmarks():
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    edge = [(t, 0) for t in np.linspace(0.05, 0.95, 16)] + [(1, t) for t in np.linspace(0.05, 0.95, 16)]
    edge += [(t, 1) for t in np.linspace(0.05, 0.95, 16)] + [(0, t) for t in np.linspace(0.05, 0.95, 16)]
    return LandmarkSet(np.array(corners + edge))


def test_parse_round_trip(tmp_path):
    ref = LandmarkSet(reference_face_landmarks(), frame=3)
    other = LandmarkSet(reference_face_landmarks() + 1.25, frame=0)
    p = tmp_path / "l.jsonl"
    write_landmarks(p, [ref, other])
    got = parse_landmarks(p)
    assert [s.frame for s in got] == [0, 3]
    assert got[1] == ref and got[0] == other


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 50), unique=True, min_size=0, max_size=5), st.integers(0, 2**32 - 1))
def test_parse_serialize_identity(tmp_path_factory, frames, seed):
    rng = np.random.default_rng(seed)
    sets = [LandmarkSet(rng.uniform(-10, 400, (68, 2)), f) for f in frames]
    p = tmp_path_factory.mktemp("lm") / "x.jsonl"
    write_landmarks(p, sets)
    assert parse_landmarks(p) == sorted(sets, key=lambda s: s.frame)


def test_wrong_point_count_names_frame(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text(json.dumps({"frame": 4, "points": [[0, 0]] * 67}) + "\n")
    with pytest.raises(LandmarkError, match="frame 4: expected 68 points"):
        parse_landmarks(p)


def test_non_numeric_names_frame(tmp_path):
    pts = [[1.0, 2.0]] * 68
    pts[5] = ["a", 2.0]
    p = tmp_path / "l.jsonl"
    p.write_text(json.dumps({"frame": 9, "points": pts}) + "\n")
    with pytest.raises(LandmarkError, match="frame 9"):
        parse_landmarks(p)


def test_empty_file(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text("")
    assert parse_landmarks(p) == []


def test_missing_frames_stay_absent(tmp_path):
    p = tmp_path / "l.jsonl"
    write_landmarks(p, [LandmarkSet(reference_face_landmarks(), f) for f in (0, 2, 5)])
    assert [s.frame for s in parse_landmarks(p)] == [0, 2, 5]


def test_validity_accessor_flags_out_of_frame_points():
    lms = LandmarkSet(reference_face_landmarks())
    assert lms.in_bounds(320, 240)
    assert not lms.transformed(dx=-150).in_bounds(320, 240)


def test_square_hull_area():
    face = face_hull(square_landmarks())
    assert face.area_px2 == pytest.approx(1.0, abs=1e-12)
    assert face.bbox == (0.0, 0.0, 1.0, 1.0)


def test_collinear_is_degenerate():
    pts = np.column_stack([np.arange(68.0), 2 * np.arange(68.0)])
    with pytest.raises(DegenerateFaceError, match="degenerate face"):
        face_hull(LandmarkSet(pts))


def test_hull_area_matches_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(5):
        pts = rng.uniform(0, 100, (68, 2))
        assert face_hull(LandmarkSet(pts)).area_px2 == pytest.approx(brute_force_hull_area(pts), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(0.1, 10), st.floats(0.1, 10))
def test_hull_area_translation_and_scaling(dx, dy, sx, sy):
    lms = LandmarkSet(reference_face_landmarks())
    a0 = face_hull(lms).area_px2
    assert face_hull(lms.transformed(dx=dx, dy=dy)).area_px2 == pytest.approx(a0, rel=1e-9)
    assert face_hull(lms.transformed(sx, sy)).area_px2 == pytest.approx(a0 * sx * sy, rel=1e-9)
    assert face_hull(lms.transformed(sx, sx)).area_px2 == pytest.approx(a0 * sx * sx, rel=1e-9)


def test_face_crop_shape():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (240, 320, 3), dtype=np.uint8)
    crop = face_crop(img, LandmarkSet(reference_face_landmarks()), 64)
    assert crop.shape == (64, 64) and crop.dtype == np.uint8


def test_face_crop_whole_image():
    img = np.random.default_rng(1).integers(0, 256, (100, 120, 3), dtype=np.uint8)
    pts = np.array([(x, y) for x in np.linspace(0, 120, 17) for y in (0, 100)] +
                   [(0, y) for y in np.linspace(5, 95, 17)] + [(120, y) for y in np.linspace(5, 95, 17)])
    crop = face_crop(img, LandmarkSet(pts[:68]), 32)
    assert np.array_equal(crop, resize_bilinear(to_grayscale(img), 32, 32))


def test_face_crop_too_small():
    small = LandmarkSet(reference_face_landmarks() * 0.3)
    with pytest.raises(FaceTooSmallError):
        face_crop(np.zeros((240, 320), np.uint8), small, 64)


def test_face_crop_outside_frame():
    lms = LandmarkSet(reference_face_landmarks()).transformed(dx=1000)
    with pytest.raises(FaceOutsideFrameError, match="face outside frame"):
        face_crop(np.zeros((240, 320), np.uint8), lms, 64)


def test_crop_size_precondition():
    with pytest.raises(ValueError):
        face_crop(np.zeros((240, 320), np.uint8), LandmarkSet(reference_face_landmarks()), 8)
