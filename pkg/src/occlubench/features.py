"""Feature extractors: uniform LBP histograms, image-quality measures, and
face/background frame-difference motion features."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .imaging import gaussian_blur

EXTRACTORS = ("LBP59", "IQM", "MOTION5")
DIMS = {"LBP59": 59, "IQM": 12, "MOTION5": 5}
CLI_NAMES = {"lbp": "LBP59", "iqm": "IQM", "motion": "MOTION5"}

IQM_NAMES = ("mse", "psnr", "snr", "sc", "md", "ad", "nae", "lmse", "ncc", "ted", "gme", "hist_chi2")
PSNR_CAP = 100.0
EPS = 1e-12
IQM_SIGMA = 0.5
MOTION_EPS = 1e-6

# (dy, dx) of the eight neighbours, clockwise from top-left; bit k = 2**k
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


class FeatureError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureVector:
    extractor: str
    values: np.ndarray
    sample_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        if self.extractor not in DIMS:
            raise FeatureError(f"unknown extractor {self.extractor!r}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (DIMS[self.extractor],):
            raise FeatureError(f"{self.extractor} expects {DIMS[self.extractor]} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise FeatureError(f"non-finite feature in {self.sample_id} frame {self.frame_index}")
        object.__setattr__(self, "values", v)


# --------------------------------------------------------------------------
# LBP


def lbp_code(patch) -> int:
    p = np.asarray(patch).reshape(3, 3)
    center = p[1, 1]
    code = 0
    for k, (dy, dx) in enumerate(NEIGHBOURS):
        if p[1 + dy, 1 + dx] >= center:
            code |= 1 << k
    return code


def transitions(code: int) -> int:
    """Number of circular 0/1 changes in the 8-bit pattern."""
    return sum(((code >> k) & 1) != ((code >> ((k + 1) % 8)) & 1) for k in range(8))


def _build_uniform_table() -> np.ndarray:
    table = np.full(256, 58, dtype=np.int64)
    nxt = 0
    for code in range(256):
        if transitions(code) <= 2:
            table[code] = nxt
            nxt += 1
    assert nxt == 58
    return table


UNIFORM_TABLE = _build_uniform_table()
FLAT_BIN = int(UNIFORM_TABLE[255])


def uniform_bin(code: int) -> int:
    return int(UNIFORM_TABLE[code])


def lbp_map(img: np.ndarray) -> np.ndarray:
    """LBP codes for all interior pixels, shape ``(H-2, W-2)``."""
    if img.ndim != 2:
        raise FeatureError("lbp_map expects a grayscale image")
    h, w = img.shape
    if h < 3 or w < 3:
        raise FeatureError("image too small for LBP (need >= 3x3)")
    center = img[1:-1, 1:-1]
    codes = np.zeros((h - 2, w - 2), dtype=np.uint8)
    for k, (dy, dx) in enumerate(NEIGHBOURS):
        nb = img[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        codes |= (nb >= center).astype(np.uint8) << k
    return codes


def lbp_histogram(img: np.ndarray, sample_id: str = "", frame_index: int = 0) -> FeatureVector:
    bins = UNIFORM_TABLE[lbp_map(img)]
    hist = np.bincount(bins.ravel(), minlength=59).astype(np.float64)
    return FeatureVector("LBP59", hist / hist.sum(), sample_id, frame_index)


# --------------------------------------------------------------------------
# image quality measures

_LAPLACE = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)


def filter3x3(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """3x3 correlation with clamp-to-edge borders."""
    p = np.pad(np.asarray(a, dtype=np.float64), 1, mode="edge")
    h, w = a.shape
    out = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            if kernel[dy, dx]:
                out += kernel[dy, dx] * p[dy:dy + h, dx:dx + w]
    return out


def sobel_magnitude(a: np.ndarray) -> np.ndarray:
    gx = filter3x3(a, _SOBEL_X)
    gy = filter3x3(a, _SOBEL_X.T)
    return np.hypot(gx, gy)


def quality_measures(img: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """The twelve full-reference measures of ``img`` against ``ref`` (both 8-bit)."""
    if img.shape != ref.shape:
        raise FeatureError("image and reference differ in shape")
    i = img.astype(np.float64)
    ref = ref.astype(np.float64)
    d = i - ref
    sq = float(np.sum(d * d))
    mse = sq / d.size
    psnr = PSNR_CAP if mse == 0 else min(PSNR_CAP, 10 * math.log10(255.0 ** 2 / mse))
    ii = float(np.sum(i * i))
    snr = min(PSNR_CAP, 10 * math.log10((ii + EPS) / (sq + EPS)))
    sc = ii / (float(np.sum(ref * ref)) + EPS)
    md = float(np.max(np.abs(d)))
    ad = float(np.mean(d))
    nae = float(np.sum(np.abs(d))) / (float(np.sum(np.abs(i))) + EPS)
    li, lr = filter3x3(i, _LAPLACE), filter3x3(ref, _LAPLACE)
    lmse = float(np.sum((li - lr) ** 2)) / (float(np.sum(li * li)) + EPS)
    ncc = float(np.sum(i * ref)) / (ii + EPS)
    gi, gr = sobel_magnitude(i), sobel_magnitude(ref)
    ted = float(np.mean(np.abs(gi - gr)))
    gme = float(np.mean((gi - gr) ** 2))
    hi = np.bincount((img.astype(np.int64) // 8).ravel(), minlength=32) / img.size
    hr = np.bincount((ref.astype(np.int64) // 8).ravel(), minlength=32) / img.size
    chi2 = float(np.sum((hi - hr) ** 2 / (hi + hr + EPS)))
    return np.array([mse, psnr, snr, sc, md, ad, nae, lmse, ncc, ted, gme, chi2])


def iqm_values(img: np.ndarray) -> np.ndarray:
    if img.ndim != 2:
        raise FeatureError("iqm expects a grayscale image")
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise FeatureError("image too small for IQM (need >= 16x16)")
    return quality_measures(img, gaussian_blur(img, IQM_SIGMA))


def iqm_vector(img: np.ndarray, sample_id: str = "", frame_index: int = 0) -> FeatureVector:
    """Twelve full-reference measures between ``img`` and its Gaussian-blurred copy."""
    return FeatureVector("IQM", iqm_values(img), sample_id, frame_index)


# --------------------------------------------------------------------------
# motion

BBox = Tuple[int, int, int, int]


def motion_signal(frames: Sequence[np.ndarray], face_bbox: BBox,
                  img_dims: Tuple[int, int]) -> np.ndarray:
    """Mean absolute frame difference inside (Df) and outside (Db) the face box.

    Returns an array of shape ``(n_frames - 1, 2)``; ``img_dims`` is (width, height).
    """
    if len(frames) < 2:
        raise FeatureError("motion needs at least 2 frames")
    w, h = img_dims
    for f in frames:
        if f.shape[:2] != (h, w) or f.ndim != 2:
            raise FeatureError("frame dimensions do not match")
    x0, y0, x1, y1 = face_bbox
    x0, y0 = max(int(x0), 0), max(int(y0), 0)
    x1, y1 = min(int(x1), w), min(int(y1), h)
    inside = np.zeros((h, w), dtype=bool)
    inside[y0:y1, x0:x1] = True
    n_in = int(inside.sum())
    if n_in == 0:
        raise FeatureError("face box outside frame")
    if n_in == w * h:
        raise FeatureError("no background")
    out = np.empty((len(frames) - 1, 2))
    for t in range(len(frames) - 1):
        diff = np.abs(frames[t + 1].astype(np.float64) - frames[t].astype(np.float64))
        out[t] = diff[inside].mean(), diff[~inside].mean()
    return out


def motion_values(signal: np.ndarray, eps: float = MOTION_EPS) -> np.ndarray:
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 2:
        raise FeatureError("signal must have shape (T, 2)")
    if s.shape[0] < 2:
        raise FeatureError("motion features need at least 2 transitions")
    df, db = s[:, 0], s[:, 1]
    r = df / (df + db + eps)
    mdf, mdb = float(df.mean()), float(db.mean())
    return np.array([float(r.mean()), float(r.std()), mdf, mdb, mdf / (mdb + eps)])


def motion_features(signal: np.ndarray, eps: float = MOTION_EPS, sample_id: str = "",
                    frame_index: int = 0) -> FeatureVector:
    return FeatureVector("MOTION5", motion_values(signal, eps), sample_id, frame_index)


# --------------------------------------------------------------------------
# CSV


def write_feature_csv(path: str | os.PathLike, vectors: Iterable[FeatureVector]) -> None:
    vectors = list(vectors)
    dim = len(vectors[0].values) if vectors else 0
    if any(len(v.values) != dim for v in vectors):
        raise FeatureError("mixed feature dimensions in one CSV")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample_id", "frame", "extractor"] + [f"v{i}" for i in range(dim)])
        for v in vectors:
            wr.writerow([v.sample_id, v.frame_index, v.extractor]
                        + [format(float(x), ".9g") for x in v.values])


def read_feature_csv(path: str | os.PathLike) -> List[FeatureVector]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or header[:3] != ["sample_id", "frame", "extractor"]:
            raise FeatureError(f"{path}: not a feature CSV")
        for row in rd:
            out.append(FeatureVector(row[2], np.array([float(x) for x in row[3:]]),
                                     row[0], int(row[1])))
    return out
