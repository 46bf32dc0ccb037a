"""68-point landmark sets (dlib ordering) and the face regions derived from them."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .imaging import resize_bilinear, to_grayscale

N_POINTS = 68
JAW = range(0, 17)
BROWS = range(17, 27)
NOSE = range(27, 36)
RIGHT_EYE = range(36, 42)
LEFT_EYE = range(42, 48)
MOUTH = range(48, 68)

MIN_FACE_SIZE = 64
CROP_MARGIN = 0.10


class LandmarkError(ValueError):
    pass


class DegenerateFaceError(LandmarkError):
    pass


class FaceOutsideFrameError(LandmarkError):
    pass


class FaceTooSmallError(LandmarkError):
    pass


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    points: np.ndarray
    frame: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (N_POINTS, 2):
            raise LandmarkError(f"frame {self.frame}: expected {N_POINTS} points")
        if not np.all(np.isfinite(pts)):
            raise LandmarkError(f"frame {self.frame}: non-finite coordinate")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.points, other.points)

    def __getitem__(self, idx):
        return self.points[idx]

    def group(self, idx: Iterable[int]) -> np.ndarray:
        return self.points[list(idx)]

    def in_bounds(self, width: int, height: int) -> bool:
        """False when any point falls outside the image (allowed, but flagged)."""
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all((x >= 0) & (x <= width) & (y >= 0) & (y <= height)))

    def transformed(self, sx: float = 1.0, sy: float = 1.0, dx: float = 0.0,
                    dy: float = 0.0) -> "LandmarkSet":
        pts = self.points * np.array([sx, sy]) + np.array([dx, dy])
        return LandmarkSet(pts, self.frame)

    def to_json(self) -> str:
        return json.dumps({"frame": int(self.frame),
                           "points": [[float(x), float(y)] for x, y in self.points]})


@dataclass(frozen=True, eq=False)
class FaceRegion:
    hull: np.ndarray
    bbox: Tuple[float, float, float, float]  # x0, y0, x1, y1
    area_px2: float

    @property
    def width(self) -> float:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]


def _parse_line(line: str, lineno: int) -> LandmarkSet:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LandmarkError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    frame = obj.get("frame")
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise LandmarkError(f"line {lineno}: missing integer 'frame'")
    points = obj.get("points")
    if not isinstance(points, list) or len(points) != N_POINTS:
        raise LandmarkError(f"frame {frame}: expected {N_POINTS} points")
    for p in points:
        if (not isinstance(p, list) or len(p) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)):
            raise LandmarkError(f"frame {frame}: non-numeric coordinate {p!r}")
    return LandmarkSet(np.array(points, dtype=np.float64), frame)


def parse_landmarks(path: str | os.PathLike) -> List[LandmarkSet]:
    """Read a JSON-Lines landmark file, one ``{"frame", "points"}`` object per line.

    Frames without a line are simply absent from the returned list.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                out.append(_parse_line(line, lineno))
    out.sort(key=lambda s: s.frame)
    frames = [s.frame for s in out]
    if len(set(frames)) != len(frames):
        raise LandmarkError(f"{path}: duplicate frame index")
    return out


def write_landmarks(path: str | os.PathLike, sets: Sequence[LandmarkSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sorted(sets, key=lambda s: s.frame):
            fh.write(s.to_json() + "\n")


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise (in y-up terms), no collinear points."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64))))
    if len(pts) < 3:
        return np.array(pts)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def shoelace_area(poly: np.ndarray) -> float:
    poly = np.asarray(poly, dtype=np.float64)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def face_hull(lms: LandmarkSet) -> FaceRegion:
    hull = convex_hull(lms.points)
    area = shoelace_area(hull) if len(hull) >= 3 else 0.0
    if len(hull) < 3 or area <= 0.0:
        raise DegenerateFaceError("degenerate face")
    bbox = (float(hull[:, 0].min()), float(hull[:, 1].min()),
            float(hull[:, 0].max()), float(hull[:, 1].max()))
    return FaceRegion(hull=hull, bbox=bbox, area_px2=area)


def crop_box(face: FaceRegion, width: int, height: int,
             margin: float = CROP_MARGIN) -> Tuple[int, int, int, int]:
    """Integer crop rectangle: hull bbox grown by ``margin`` per side, clamped."""
    x0, y0, x1, y1 = face.bbox
    mx, my = margin * (x1 - x0), margin * (y1 - y0)
    cx0 = max(int(math.floor(x0 - mx)), 0)
    cy0 = max(int(math.floor(y0 - my)), 0)
    cx1 = min(int(math.ceil(x1 + mx)), width)
    cy1 = min(int(math.ceil(y1 + my)), height)
    if cx0 >= cx1 or cy0 >= cy1:
        raise FaceOutsideFrameError("face outside frame")
    return cx0, cy0, cx1, cy1


def face_crop(img: np.ndarray, lms: LandmarkSet, size: int = 64,
              min_face_size: Optional[int] = MIN_FACE_SIZE) -> np.ndarray:
    """Grayscale ``size`` x ``size`` crop around the face hull."""
    if size < 16:
        raise ValueError("crop size must be >= 16")
    face = face_hull(lms)
    if min_face_size is not None and max(face.width, face.height) < min_face_size:
        raise FaceTooSmallError(
            f"face {max(face.width, face.height):.1f}px below minimum {min_face_size}px")
    x0, y0, x1, y1 = crop_box(face, img.shape[1], img.shape[0])
    return resize_bilinear(to_grayscale(img[y0:y1, x0:x1]), size, size)
