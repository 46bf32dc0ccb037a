"""Raster primitives shared by the rest of the package.

Images are plain numpy ``uint8`` arrays: ``(H, W)`` for grayscale and
``(H, W, 3)`` for RGB. Pixel ``(col, row)`` has its center at
``(col + 0.5, row + 0.5)`` in the continuous coordinate frame used by
landmarks and polygons.
"""

from __future__ import annotations

import math
import os
from typing import Sequence, Tuple

import numpy as np

Point = Tuple[float, float]


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class DegeneratePolygonError(ValueError):
    pass


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(round_half_up(x), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PPM / PGM


def _read_token(buf: bytes, pos: int) -> Tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("malformed header")
    return buf[start:pos], pos


def decode_pnm(buf: bytes) -> np.ndarray:
    magic, pos = _read_token(buf, 0) if buf else (b"", 0)
    if magic not in (b"P5", b"P6"):
        raise MalformedHeaderError("malformed header")
    fields = []
    for _ in range(3):
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise MalformedHeaderError("malformed header")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError("malformed header")
    if maxval != 255:
        raise UnsupportedDepthError(f"unsupported maxval {maxval} (only 8-bit)")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("malformed header")
    pos += 1
    nch = 3 if magic == b"P6" else 1
    size = width * height * nch
    payload = buf[pos:pos + size]
    if len(payload) != size:
        raise ImageFormatError("truncated pixel data")
    arr = np.frombuffer(payload, dtype=np.uint8).copy()
    return arr.reshape((height, width, 3) if nch == 3 else (height, width))


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    magic = b"P6" if img.ndim == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def load_image(path: str | os.PathLike) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from exc
    return decode_pnm(buf)


def save_image(path: str | os.PathLike, img: np.ndarray) -> None:
    if img.ndim == 3 and img.shape[2] != 3:
        raise ValueError("only 1- or 3-channel images can be saved")
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))


# --------------------------------------------------------------------------
# pixel operations


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma with round-half-up. 1-channel input is returned as a copy."""
    if img.ndim == 2:
        return img.copy()
    rgb = img.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return to_uint8(y)


def _bilinear_axis(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_float(img: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize (half-pixel centers) returning float64 samples."""
    a = np.asarray(img, dtype=np.float64)
    y0, y1, fy = _bilinear_axis(a.shape[0], h)
    x0, x1, fx = _bilinear_axis(a.shape[1], w)
    if a.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img: np.ndarray, w: int, h: int) -> np.ndarray:
    if w < 1 or h < 1:
        raise ValueError("target size must be >= 1")
    if img.shape[0] == h and img.shape[1] == w:
        return img.copy()
    return to_uint8(resize_float(img, w, h))


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    n = a.shape[axis]
    for i, w in enumerate(k):
        out += w * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def gaussian_blur_float(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with clamp-to-edge borders, float64 result."""
    k = gaussian_kernel(sigma)
    a = np.asarray(img, dtype=np.float64)
    return _convolve_axis(_convolve_axis(a, k, 0), k, 1)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return to_uint8(gaussian_blur_float(img, sigma))


# --------------------------------------------------------------------------
# polygons


def _check_polygon(poly: Sequence[Point]) -> np.ndarray:
    pts = np.asarray(poly, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise DegeneratePolygonError("polygon needs at least 3 vertices")
    return pts


def points_in_polygon(px: np.ndarray, py: np.ndarray, poly: Sequence[Point]) -> np.ndarray:
    """Even-odd crossing test for arrays of query points."""
    pts = _check_polygon(poly)
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    xs, ys = pts[:, 0], pts[:, 1]
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    for x_i, y_i, x_j, y_j in zip(xs, ys, xj, yj):
        if y_i == y_j:
            continue
        crosses = (y_i > py) != (y_j > py)
        # only rows that cross the edge are used; elsewhere the ratio may overflow
        with np.errstate(over="ignore", invalid="ignore"):
            x_cross = (x_j - x_i) * (py - y_i) / (y_j - y_i) + x_i
        inside ^= crosses & (px < x_cross)
    return inside


def polygon_mask(poly: Sequence[Point], width: int, height: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose centers lie inside ``poly``."""
    pts = _check_polygon(poly)
    mask = np.zeros((height, width), dtype=bool)
    x0 = max(int(math.floor(pts[:, 0].min())) - 1, 0)
    x1 = min(int(math.ceil(pts[:, 0].max())) + 1, width)
    y0 = max(int(math.floor(pts[:, 1].min())) - 1, 0)
    y1 = min(int(math.ceil(pts[:, 1].max())) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return mask
    cx = np.arange(x0, x1) + 0.5
    cy = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(cx, cy)
    mask[y0:y1, x0:x1] = points_in_polygon(gx, gy, pts)
    return mask


def blend_mask(img: np.ndarray, mask: np.ndarray, color, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    out = img.copy()
    if not mask.any():
        return out
    col = np.asarray(color, dtype=np.float64)
    if img.ndim == 2 and col.ndim:
        col = float(np.dot(col, [0.299, 0.587, 0.114]))
    old = img[mask].astype(np.float64)
    out[mask] = to_uint8(alpha * col + (1.0 - alpha) * old)
    return out


def fill_polygon(img: np.ndarray, poly: Sequence[Point], color, alpha: float = 1.0) -> np.ndarray:
    """Blend ``color`` into every pixel whose center is inside ``poly``."""
    _check_polygon(poly)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    mask = polygon_mask(poly, img.shape[1], img.shape[0])
    return blend_mask(img, mask, color, alpha)


def blit_textured(img: np.ndarray, poly: Sequence[Point], texture: np.ndarray,
                  shading: bool = True) -> np.ndarray:
    """Paste ``texture`` (scaled to the polygon's bbox) inside ``poly``.

    With ``shading`` the texel is scaled by a vertical ramp from 1.0 on the
    top bbox row to 0.6 on the bottom row.
    """
    pts = _check_polygon(poly)
    if texture.ndim != 3 or texture.shape[2] != 3:
        raise ValueError("texture must be RGB")
    x0 = int(math.floor(pts[:, 0].min()))
    x1 = int(math.ceil(pts[:, 0].max()))
    y0 = int(math.floor(pts[:, 1].min()))
    y1 = int(math.ceil(pts[:, 1].max()))
    bw, bh = max(x1 - x0, 1), max(y1 - y0, 1)
    tex = resize_float(texture, bw, bh)
    if shading:
        ramp = 1.0 - 0.4 * (np.arange(bh) / (bh - 1) if bh > 1 else np.zeros(1))
        tex = tex * ramp[:, None, None]
    if img.ndim == 2:
        tex = 0.299 * tex[..., 0] + 0.587 * tex[..., 1] + 0.114 * tex[..., 2]

    mask = polygon_mask(pts, img.shape[1], img.shape[0])
    out = img.copy()
    rows, cols = np.nonzero(mask)
    if rows.size:
        ty = np.clip(rows - y0, 0, bh - 1)
        tx = np.clip(cols - x0, 0, bw - 1)
        out[rows, cols] = to_uint8(tex[ty, tx])
    return out
