"""Mask and glasses occlusions anchored on 68-point landmarks.

Coverage levels of the flat 2-D masks are set by where the upper edge of the
mask crosses the nose:

* ``low``    - just below the subnasale (nose stays visible)
* ``medium`` - through the nose tip
* ``high``   - through the nose bridge (whole nose hidden)
* ``round``  - an ellipse around the mouth, similar to a cup-shaped respirator
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import imaging
from .landmarks import FaceRegion, LandmarkSet, MOUTH, face_hull

MASK_KINDS = ("low", "medium", "high", "round")
ALL_KINDS = MASK_KINDS + ("mask3d", "glasses")
DEFAULT_MASK_COLOR = (80, 80, 80)
LOW_OFFSET = 0.04  # fraction of face-bbox height below the subnasale
ASSETS_ENV = "OCCLUBENCH_ASSETS"

Color = Tuple[int, int, int]


class OcclusionError(ValueError):
    pass


class UnknownAssetError(OcclusionError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown asset"


# --------------------------------------------------------------------------
# assets


@dataclass(frozen=True)
class GlassesStyle:
    id: str
    shape: str  # "rect" | "ellipse"
    scale: float
    alpha: float
    color: Color = (25, 25, 25)

    def __post_init__(self):
        if self.shape not in ("rect", "ellipse"):
            raise OcclusionError(f"glasses {self.id}: unknown shape {self.shape!r}")
        if self.scale < 1.0:
            raise OcclusionError(f"glasses {self.id}: scale must be >= 1")
        if not (self.alpha == 1.0 or 0.3 <= self.alpha <= 0.7):
            raise OcclusionError(f"glasses {self.id}: alpha must be 1.0 or in [0.3, 0.7]")

    @property
    def opaque(self) -> bool:
        return self.alpha == 1.0


@dataclass
class AssetPack:
    textures: Dict[str, np.ndarray] = field(default_factory=dict)
    glasses: Dict[str, GlassesStyle] = field(default_factory=dict)

    def texture(self, tid: str) -> np.ndarray:
        try:
            return self.textures[tid]
        except KeyError:
            raise UnknownAssetError(f"unknown texture id {tid!r}") from None

    def style(self, sid: str) -> GlassesStyle:
        try:
            return self.glasses[sid]
        except KeyError:
            raise UnknownAssetError(f"unknown glasses style {sid!r}") from None

    def save(self, directory: str | os.PathLike) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"textures": [], "glasses": []}
        for tid in sorted(self.textures):
            rel = f"texture_{tid}.ppm"
            imaging.save_image(d / rel, self.textures[tid])
            manifest["textures"].append({"id": tid, "path": rel})
        for sid in sorted(self.glasses):
            s = self.glasses[sid]
            manifest["glasses"].append({"id": s.id, "shape": s.shape, "scale": s.scale,
                                        "alpha": s.alpha, "color": list(s.color)})
        path = d / "assets.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


def load_assets(path: str | os.PathLike) -> AssetPack:
    p = Path(path)
    if p.is_dir():
        p = p / "assets.json"
    manifest = json.loads(p.read_text())
    pack = AssetPack()
    for t in manifest.get("textures", []):
        if t["id"] in pack.textures:
            raise OcclusionError(f"duplicate texture id {t['id']!r}")
        tex = imaging.load_image(p.parent / t["path"])
        if tex.ndim != 3:
            raise OcclusionError(f"texture {t['id']!r} must be RGB")
        pack.textures[t["id"]] = tex
    for g in manifest.get("glasses", []):
        if g["id"] in pack.glasses:
            raise OcclusionError(f"duplicate glasses id {g['id']!r}")
        pack.glasses[g["id"]] = GlassesStyle(g["id"], g["shape"], float(g["scale"]),
                                             float(g["alpha"]), tuple(g["color"]))
    return pack


def _procedural_texture(kind: str, scale: int, rng: np.random.Generator,
                        size: int = 64) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if kind == "stripes":
        t = ((xx + yy) // scale) % 2
        a, b = np.array([40, 70, 150]), np.array([215, 220, 235])
        img = np.where(t[..., None] == 1, a, b)
    elif kind == "checker":
        t = (xx // scale + yy // scale) % 2
        a, b = np.array([150, 40, 45]), np.array([235, 225, 210])
        img = np.where(t[..., None] == 1, a, b)
    else:
        noise = imaging.gaussian_blur_float(rng.normal(0, 1, (size, size)), scale / 2)
        noise = noise / (noise.std() + 1e-12)
        base = np.array([90, 140, 110], dtype=np.float64)
        img = base + 35 * noise[..., None] * np.array([1.0, 0.8, 0.9])
    return imaging.to_uint8(img)


def default_asset_pack() -> AssetPack:
    """Built-in pack: 9 procedural mask textures and 12 glasses styles."""
    rng = np.random.default_rng(20201)
    pack = AssetPack()
    for kind in ("stripes", "checker", "noise"):
        for i, scale in enumerate((2, 4, 8), 1):
            pack.textures[f"{kind}{i}"] = _procedural_texture(kind, scale, rng)
    for shape in ("rect", "ellipse"):
        for i, scale in enumerate((1.3, 1.6, 1.9), 1):
            for opacity, alpha, color in (("opaque", 1.0, (20, 20, 20)),
                                          ("tinted", 0.5, (30, 30, 60))):
                sid = f"{shape}{i}_{opacity}"
                pack.glasses[sid] = GlassesStyle(sid, shape, scale, alpha, color)
    return pack


def resolve_assets() -> AssetPack:
    path = os.environ.get(ASSETS_ENV)
    return load_assets(path) if path else default_asset_pack()


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class OcclusionSpec:
    """One attack. ``asset`` is None for pooled mask3d/glasses: the asset is
    then picked per sample (see :meth:`for_sample`)."""

    kind: str
    asset: Optional[str] = None
    color: Color = DEFAULT_MASK_COLOR
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise OcclusionError(f"unknown occlusion kind {self.kind!r}")
        if self.asset is not None and self.kind in MASK_KINDS:
            raise OcclusionError(f"occlusion {self.kind!r} takes no asset id")

    @property
    def name(self) -> str:
        return self.kind if self.asset is None else f"{self.kind}:{self.asset}"

    def for_sample(self, sample_id: str, assets: AssetPack) -> "OcclusionSpec":
        if self.asset is not None or self.kind in MASK_KINDS:
            return self
        pool = sorted(assets.textures if self.kind == "mask3d" else assets.glasses)
        if not pool:
            raise UnknownAssetError(f"asset pack has no {self.kind} assets")
        h = int.from_bytes(hashlib.sha256(sample_id.encode()).digest()[:8], "big")
        return replace(self, asset=pool[h % len(pool)])


def parse_occlusion(name: str) -> Optional[OcclusionSpec]:
    """``none`` -> None; otherwise ``low|medium|high|round|mask3d[:id]|glasses[:id]``."""
    if name == "none":
        return None
    kind, _, asset = name.partition(":")
    return OcclusionSpec(kind, asset or None)


# --------------------------------------------------------------------------
# geometry


def _jaw_x_at(lms: LandmarkSet, y: float, side: str) -> float:
    """x of the jaw contour at height ``y``, walking from the ear toward the chin."""
    idx = list(range(0, 9)) if side == "left" else list(range(16, 7, -1))
    pts = lms.points[idx]
    if y <= pts[0, 1]:
        return float(pts[0, 0])
    for a, b in zip(pts[:-1], pts[1:]):
        lo, hi = min(a[1], b[1]), max(a[1], b[1])
        if lo <= y <= hi and hi > lo:
            t = (y - a[1]) / (b[1] - a[1])
            return float(a[0] + t * (b[0] - a[0]))
    return float(pts[-1, 0])


def mask_upper_y(lms: LandmarkSet, kind: str, face: Optional[FaceRegion] = None) -> float:
    if kind == "low":
        face = face or face_hull(lms)
        return float(lms[33][1] + LOW_OFFSET * face.height)
    if kind == "medium":
        return float(lms[30][1])
    if kind == "high":
        return float(lms[28][1])
    raise OcclusionError(f"no flat-mask polygon for kind {kind!r}")


def mask_polygon(lms: LandmarkSet, kind: str) -> np.ndarray:
    """Jaw points 2..14 closed by a horizontal edge at the coverage level."""
    face = face_hull(lms)
    y = mask_upper_y(lms, kind, face)
    jaw = lms.points[2:15]
    upper = np.array([[_jaw_x_at(lms, y, "right"), y], [_jaw_x_at(lms, y, "left"), y]])
    return np.vstack([jaw, upper])


def ellipse_polygon(cx: float, cy: float, a: float, b: float, n: int) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([cx + a * np.cos(th), cy + b * np.sin(th)])


def round_mask_ellipse(lms: LandmarkSet) -> np.ndarray:
    face_hull(lms)
    cx, cy = lms.group(MOUTH).mean(axis=0)
    a = 0.5 * float(np.linalg.norm(lms[4] - lms[12]))
    b = 1.1 * float(np.linalg.norm(lms[33] - lms[8])) / 2
    return ellipse_polygon(cx, cy, a, b, 64)


def _bar(p: np.ndarray, q: np.ndarray, thickness: float) -> np.ndarray:
    d = q - p
    n = np.array([-d[1], d[0]]) / (np.linalg.norm(d) + 1e-12) * thickness / 2
    return np.array([p + n, q + n, q - n, p - n])


def glasses_geometry(lms: LandmarkSet, style: GlassesStyle) -> List[Tuple[np.ndarray, float, Color]]:
    """Two lenses, a bridge and two temples as ``(polygon, alpha, color)`` parts."""
    lenses = []
    for idx in (range(36, 42), range(42, 48)):
        eye = lms.group(idx)
        (x0, y0), (x1, y1) = eye.min(axis=0), eye.max(axis=0)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        hw = style.scale * (x1 - x0) / 2
        hh = style.scale * max(y1 - y0, 0.5 * (x1 - x0)) / 2
        if style.shape == "rect":
            poly = np.array([[cx - hw, cy - hh], [cx + hw, cy - hh],
                             [cx + hw, cy + hh], [cx - hw, cy + hh]])
        else:
            # circumscribe so the polygon contains the true ellipse
            k = 1.0 / math.cos(math.pi / 24)
            poly = ellipse_polygon(cx, cy, hw * k, hh * k, 24)
        lenses.append((poly, cx, cy, hw, hh))

    (rpoly, rcx, rcy, rhw, rhh), (lpoly, lcx, lcy, lhw, lhh) = lenses
    t = max(2.0, 0.25 * min(rhh, lhh))
    frame = style.color
    parts = [(rpoly, style.alpha, style.color), (lpoly, style.alpha, style.color)]
    parts.append((_bar(np.array([rcx + rhw, rcy]), np.array([lcx - lhw, lcy]), t), 1.0, frame))
    parts.append((_bar(np.array([rcx - rhw, rcy]), lms[0], t), 1.0, frame))
    parts.append((_bar(np.array([lcx + lhw, lcy]), lms[16], t), 1.0, frame))
    return parts


def occlusion_polygons(lms: LandmarkSet, spec: OcclusionSpec,
                       assets: AssetPack) -> List[np.ndarray]:
    if spec.kind in ("low", "medium", "high"):
        return [mask_polygon(lms, spec.kind)]
    if spec.kind == "round":
        return [round_mask_ellipse(lms)]
    if spec.kind == "mask3d":
        return [mask_polygon(lms, "medium")]
    if spec.asset is None:
        raise OcclusionError("glasses occlusion needs a resolved style id")
    return [p for p, _, _ in glasses_geometry(lms, assets.style(spec.asset))]


def apply_occlusion(img: np.ndarray, lms: Optional[LandmarkSet], spec: OcclusionSpec,
                    assets: AssetPack) -> np.ndarray:
    """Return an occluded copy of ``img``.

    ``lms=None`` means no landmarks were available: the frame is returned
    unchanged and the caller records it as an unoccluded fallback.
    """
    if lms is None:
        return img.copy()
    if spec.kind in ("low", "medium", "high"):
        return imaging.fill_polygon(img, mask_polygon(lms, spec.kind), spec.color, 1.0)
    if spec.kind == "round":
        return imaging.fill_polygon(img, round_mask_ellipse(lms), spec.color, 1.0)
    if spec.asset is None:
        raise OcclusionError(f"{spec.kind} occlusion needs a resolved asset id")
    if spec.kind == "mask3d":
        return imaging.blit_textured(img, mask_polygon(lms, "medium"),
                                     assets.texture(spec.asset), shading=True)
    out = img
    for poly, alpha, color in glasses_geometry(lms, assets.style(spec.asset)):
        out = imaging.fill_polygon(out, poly, color, alpha)
    return out if out is not img else img.copy()


def coverage_fraction(poly: np.ndarray, face: FaceRegion, img_dims: Tuple[int, int]) -> float:
    """Share of face-hull pixels (by pixel center) that ``poly`` covers.

    ``img_dims`` is ``(width, height)``.
    """
    w, h = img_dims
    hull = imaging.polygon_mask(face.hull, w, h)
    n = int(hull.sum())
    if n == 0:
        raise OcclusionError("zero-area face hull")
    inside = imaging.polygon_mask(poly, w, h)
    return float((inside & hull).sum()) / n


def kind_polygon(lms: LandmarkSet, kind: str) -> np.ndarray:
    return round_mask_ellipse(lms) if kind == "round" else mask_polygon(lms, kind)
