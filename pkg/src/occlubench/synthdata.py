"""Procedural face videos with exact landmarks, plus print/replay recaptures.

Faces are a skin-tone ellipse with band-limited noise texture and dark
eye/brow/nose/mouth blobs drawn on a 68-point landmark layout. Recaptured
attacks are derived from the bonafide frames:

* ``print``  - 0.5x bilinear downscale, upscale back, contrast x0.8
* ``replay`` - ``print`` plus a horizontal moire pattern of amplitude 6
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import imaging
from .landmarks import LandmarkSet, write_landmarks

ATTACK_KINDS = ("print", "replay")

# Mean 68-point layout in unit face coordinates (dlib order), brows raised to
# give a forehead band inside the convex hull.
_MEAN_SHAPE = np.array([
    (0.0792, 0.3392), (0.0829, 0.4570), (0.0968, 0.5756), (0.1221, 0.6919),
    (0.1687, 0.8003), (0.2398, 0.8957), (0.3257, 0.9771), (0.4223, 1.0433),
    (0.5318, 1.0608), (0.6413, 1.0398), (0.7381, 0.9723), (0.8244, 0.8896),
    (0.8948, 0.7925), (0.9394, 0.6815), (0.9611, 0.5622), (0.9706, 0.4418),
    (0.9712, 0.3221), (0.1638, 0.2492), (0.2178, 0.2043), (0.2913, 0.1924),
    (0.3675, 0.2036), (0.4393, 0.2331), (0.5864, 0.2281), (0.6602, 0.1959),
    (0.7375, 0.1824), (0.8132, 0.1928), (0.8728, 0.2336), (0.5153, 0.3186),
    (0.5162, 0.3962), (0.5171, 0.4738), (0.5182, 0.5532), (0.4337, 0.6041),
    (0.4755, 0.6208), (0.5207, 0.6343), (0.5659, 0.6188), (0.6071, 0.6016),
    (0.2524, 0.3311), (0.2987, 0.3026), (0.3557, 0.3030), (0.4037, 0.3387),
    (0.3525, 0.3500), (0.2968, 0.3505), (0.6313, 0.3341), (0.6791, 0.2965),
    (0.7360, 0.2947), (0.7829, 0.3213), (0.7403, 0.3418), (0.6850, 0.3437),
    (0.3532, 0.7462), (0.4146, 0.7191), (0.4777, 0.7068), (0.5227, 0.7171),
    (0.5698, 0.7054), (0.6352, 0.7157), (0.6995, 0.7394), (0.6394, 0.8052),
    (0.5764, 0.8354), (0.5254, 0.8417), (0.4764, 0.8375), (0.4138, 0.8100),
    (0.3801, 0.7500), (0.4780, 0.7451), (0.5234, 0.7489), (0.5711, 0.7427),
    (0.6724, 0.7442), (0.5725, 0.7766), (0.5235, 0.7813), (0.4776, 0.7768),
])
BROW_RAISE = 0.13
MEAN_SHAPE = _MEAN_SHAPE.copy()
MEAN_SHAPE[17:27, 1] -= BROW_RAISE

SKIN_TONES = ((224, 172, 140), (198, 145, 110), (160, 110, 80), (236, 196, 170), (120, 80, 60))


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_subjects: int = 20
    frames_per_video: int = 10
    image_size: Tuple[int, int] = (240, 320)  # (height, width)
    attack_kinds: Tuple[str, ...] = ATTACK_KINDS

    def __post_init__(self):
        if self.n_subjects < 2:
            raise SynthError("n_subjects must be >= 2")
        if self.frames_per_video < 2:
            raise SynthError("frames_per_video must be >= 2")
        bad = set(self.attack_kinds) - set(ATTACK_KINDS)
        if bad:
            raise SynthError(f"unknown attack kinds {sorted(bad)}")


@dataclass
class SynthSample:
    id: str
    subject: str
    label: str
    attack_kind: Optional[str]
    frames: List[np.ndarray]
    landmarks: List[LandmarkSet]


def subject_rng(seed: int, subject: int) -> np.random.Generator:
    return np.random.default_rng([seed, subject])


def _place(shape: np.ndarray, face_w: float, face_h: float, cx: float, cy: float) -> np.ndarray:
    pts = np.empty_like(shape)
    pts[:, 0] = cx + (shape[:, 0] - 0.52) * face_w
    pts[:, 1] = cy + (shape[:, 1] - 0.56) * face_h
    return pts


def reference_face_landmarks(image_size=(240, 320)) -> np.ndarray:
    """The undistorted mean layout, centered, at the mid-range face size."""
    h, w = image_size
    return _place(MEAN_SHAPE, 135 * h / 240, 135 * h / 240, w / 2, h * 0.51)


def random_face_landmarks(rng: np.random.Generator, image_size=(240, 320)) -> np.ndarray:
    """One subject's neutral landmark layout in pixel coordinates."""
    h, w = image_size
    face_w = rng.uniform(125, 145) * h / 240
    face_h = face_w * rng.uniform(0.95, 1.05)
    cx = w / 2 + rng.uniform(-15, 15) * w / 320
    cy = h * 0.51 + rng.uniform(-8, 8) * h / 240
    shape = MEAN_SHAPE + rng.normal(0, 0.006, MEAN_SHAPE.shape)
    return _place(shape, face_w, face_h, cx, cy)


def _smooth_noise(rng, shape, sigma) -> np.ndarray:
    n = imaging.gaussian_blur_float(rng.normal(0, 1, shape), sigma)
    return n / (n.std() + 1e-12)


def _thick_polyline(pts: np.ndarray, thickness: float) -> np.ndarray:
    return np.vstack([pts, pts[::-1] + np.array([0, thickness])])


class _SubjectRenderer:
    def __init__(self, rng: np.random.Generator, image_size):
        self.h, self.w = image_size
        self.rng = rng
        self.base = random_face_landmarks(rng, image_size)
        self.skin = np.array(SKIN_TONES[int(rng.integers(len(SKIN_TONES)))], dtype=np.float64)
        bg_color = rng.uniform(60, 200, 3)
        yy, xx = np.mgrid[0:self.h, 0:self.w]
        ramp = (xx / self.w - 0.5) * rng.uniform(-40, 40) + (yy / self.h - 0.5) * rng.uniform(-40, 40)
        self.background = bg_color + ramp[..., None] + 20 * _smooth_noise(rng, (self.h, self.w, 1), 6.0)
        pad = 4
        self.texture = 12 * _smooth_noise(rng, (self.h + 2 * pad, self.w + 2 * pad), 0.8)
        self.pad = pad

    def frame(self, t: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        dx, dy = (0, 0) if t == 0 else (int(v) for v in rng.integers(-2, 3, 2))
        pts = self.base + np.array([dx, dy])
        img = self.background.copy()

        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        cx, cy, a, b = (x0 + x1) / 2, (y0 + y1) / 2, (x1 - x0) / 2 * 1.02, (y1 - y0) / 2 * 1.04
        yy, xx = np.mgrid[0:self.h, 0:self.w] + 0.5
        r2 = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2
        face = r2 <= 1.0
        p = self.pad
        tex = self.texture[p - dy:p - dy + self.h, p - dx:p - dx + self.w]
        shade = 1.0 - 0.15 * r2
        skin = self.skin[None, None, :] * shade[..., None] + tex[..., None]
        img[face] = skin[face]
        img = imaging.to_uint8(img)

        brow_col = (70, 50, 40)
        for grp in (slice(17, 22), slice(22, 27)):
            img = imaging.fill_polygon(img, _thick_polyline(pts[grp], 0.025 * (x1 - x0)), brow_col, 0.85)
        for grp in (slice(36, 42), slice(42, 48)):
            eye = pts[grp]
            ex0, ey0 = eye.min(axis=0)
            ex1, ey1 = eye.max(axis=0)
            ecx, ecy = (ex0 + ex1) / 2, (ey0 + ey1) / 2
            ew, eh = (ex1 - ex0) / 2, max((ey1 - ey0) / 2, 2.0)
            img = imaging.fill_polygon(img, _ellipse(ecx, ecy, ew, eh), (235, 230, 225), 1.0)
            img = imaging.fill_polygon(img, _ellipse(ecx, ecy, eh * 0.9, eh * 0.9), (60, 40, 30), 1.0)
        nose_col = tuple(int(v) for v in self.skin * 0.7)
        img = imaging.fill_polygon(img, _thick_polyline(pts[27:31], 0.02 * (x1 - x0)), nose_col, 0.5)
        img = imaging.fill_polygon(img, pts[31:36][::-1].tolist() + [pts[30].tolist()], nose_col, 0.6)
        img = imaging.fill_polygon(img, pts[48:60], (165, 70, 75), 0.9)
        img = imaging.fill_polygon(img, pts[60:68], (90, 30, 35), 0.9)

        noisy = img.astype(np.float64) + rng.normal(0, 1.5, img.shape)
        return imaging.to_uint8(noisy), pts


def _ellipse(cx, cy, a, b, n=24) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([cx + a * np.cos(th), cy + b * np.sin(th)])


def _recapture_float(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape[:2]
    small = imaging.resize_float(frame, max(w // 2, 1), max(h // 2, 1))
    back = imaging.resize_float(small, w, h)
    m = back.mean()
    return m + 0.8 * (back - m)


def print_attack(frame: np.ndarray) -> np.ndarray:
    return imaging.to_uint8(_recapture_float(frame))


def replay_attack(frame: np.ndarray, amplitude: float = 6.0, period: float = 6.0) -> np.ndarray:
    rec = _recapture_float(frame)
    rows = np.arange(frame.shape[0], dtype=np.float64)
    moire = amplitude * np.sin(2 * np.pi * rows / period)
    moire = moire[:, None, None] if frame.ndim == 3 else moire[:, None]
    return imaging.to_uint8(rec + moire)


def render_subject(cfg: SynthConfig, subject: int) -> List[SynthSample]:
    rng = subject_rng(cfg.seed, subject)
    r = _SubjectRenderer(rng, cfg.image_size)
    frames, lms = [], []
    for t in range(cfg.frames_per_video):
        img, pts = r.frame(t, rng)
        frames.append(img)
        lms.append(LandmarkSet(pts, t))
    sid = f"s{subject:03d}"
    out = [SynthSample(f"{sid}_bonafide", sid, "bonafide", None, frames, lms)]
    for kind in cfg.attack_kinds:
        fn = print_attack if kind == "print" else replay_attack
        out.append(SynthSample(f"{sid}_{kind}", sid, "attack", kind, [fn(f) for f in frames], lms))
    return out


def split_protocol(subjects: Sequence[str], ratios=(0.5, 0.2, 0.3), seed: int = 7) -> Dict[str, str]:
    """Assign whole subjects to train/dev/test; returns ``subject -> partition``."""
    subjects = sorted(set(subjects))
    n = len(subjects)
    n_train = int(round(n * ratios[0]))
    n_dev = int(round(n * ratios[1]))
    n_test = n - n_train - n_dev
    if n < 2:
        raise SynthError(f"too few subjects ({n}) for a split")
    # tiny corpora: keep train and test populated, dev only once a third subject exists
    counts = [n_train, n_dev, n_test]
    for k in (2, 1) if n >= 3 else (2,):
        if counts[k] < 1:
            counts[k] += 1
            counts[int(np.argmax(counts))] -= 1
    n_train, n_dev, n_test = counts
    order = np.random.default_rng(seed).permutation(n)
    parts = ["train"] * n_train + ["dev"] * n_dev + ["test"] * n_test
    return {subjects[int(i)]: parts[k] for k, i in enumerate(order)}


def _write_subject(args) -> List[dict]:
    cfg, subject, out_dir = args
    rows = []
    for s in render_subject(cfg, subject):
        d = Path(out_dir) / "samples" / s.id
        d.mkdir(parents=True, exist_ok=True)
        for t, f in enumerate(s.frames):
            imaging.save_image(d / f"frame_{t:04d}.ppm", f)
        write_landmarks(d / "landmarks.jsonl", s.landmarks)
        rows.append({"id": s.id, "frames_dir": f"samples/{s.id}",
                     "landmarks_path": f"samples/{s.id}/landmarks.jsonl",
                     "label": s.label, "attack_kind": s.attack_kind, "subject": s.subject})
    return rows


def generate_corpus(cfg: SynthConfig, out_dir: str | os.PathLike, jobs: int = 1,
                    split_seed: Optional[int] = None) -> Path:
    """Render the corpus under ``out_dir`` and write ``manifest.jsonl``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SynthError(f"cannot create output dir {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise SynthError(f"output dir {out} is not writable")
    tasks = [(cfg, i, str(out)) for i in range(cfg.n_subjects)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_write_subject, tasks))
    else:
        results = [_write_subject(t) for t in tasks]
    rows = [r for sub in results for r in sub]
    split = split_protocol([r["subject"] for r in rows],
                           seed=cfg.seed if split_seed is None else split_seed)
    manifest = out / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for r in sorted(rows, key=lambda r: r["id"]):
            r = dict(r, partition=split[r["subject"]])
            fh.write(json.dumps({k: r[k] for k in ("id", "frames_dir", "landmarks_path", "label",
                                                   "attack_kind", "partition", "subject")}) + "\n")
    return manifest
