"""Manifest reading, geometric face normalization and photometric
enhancement, independent of the experiment pipeline.

The math intentionally mirrors the experiment side: ROI expanded by 22%
per side (clamped to the image), rotation about the eye midpoint so the
eye line is horizontal, and a single bilinear resampling pass to a
224x224 RGB crop. Agreement is checked against golden fixtures produced
by the experiment pipeline (tests/data), with a +-1 intensity-level
tolerance per pixel.
"""

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from PIL import Image
from scipy.ndimage import gaussian_filter

ALIGNED_SIZE = 224
ROI_EXPANSION = 0.22

MANIFEST_COLUMNS = ["subject_id", "path", "domain", "eye_lx", "eye_ly",
                    "eye_rx", "eye_ry", "roi_x", "roi_y", "roi_w", "roi_h"]

ENHANCEMENT_DEFAULTS = {
    "none": {},
    "retinex": {"sigma": 100.0, "low_pct": 1.0, "high_pct": 99.0},
    "ace": {"slope": 5.0, "saturation": 1.0, "subsample": 2},
    "clahe": {"tiles": 8, "clip_limit": 2.0},
}


class ManifestError(ValueError):
    def __init__(self, rownum, msg):
        super().__init__(f"manifest row {rownum}: {msg}")
        self.rownum = rownum


@dataclass(frozen=True)
class CropSource:
    """One manifest row: a decoded image plus its annotations."""
    subject_id: str
    domain_tag: str
    sample_id: str
    image: np.ndarray
    eyes: tuple
    roi: tuple


def read_manifest(manifest_path):
    """Parse the manifest CSV into CropSources; errors name the row."""
    out = []
    counters = {}
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != MANIFEST_COLUMNS:
            raise ManifestError(0, f"header must be {','.join(MANIFEST_COLUMNS)}, "
                                   f"got {reader.fieldnames}")
        for rownum, row in enumerate(reader, start=1):
            if any(row.get(c) in (None, "") for c in MANIFEST_COLUMNS):
                raise ManifestError(rownum, "missing fields")
            token = row["domain"].strip()
            if token not in ("id", "selfie"):
                raise ManifestError(rownum, f"unknown domain {token!r} (expected id|selfie)")
            path = row["path"]
            if not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            if not os.path.exists(path):
                raise ManifestError(rownum, f"image file not found: {path}")
            try:
                with Image.open(path) as im:
                    if im.mode != "RGB":
                        raise ManifestError(rownum, f"image is {im.mode}, expected 8-bit RGB")
                    img = np.asarray(im, dtype=np.uint8)
            except ManifestError:
                raise
            except Exception as exc:
                raise ManifestError(rownum, f"cannot decode {path}: {exc}") from exc
            try:
                vals = {c: float(row[c]) for c in MANIFEST_COLUMNS[3:]}
            except ValueError as exc:
                raise ManifestError(rownum, f"malformed number: {exc}") from exc
            sid = row["subject_id"].strip()
            k = counters.get((sid, token), 0)
            counters[(sid, token)] = k + 1
            sample_id = f"{sid}/{token}" if k == 0 else f"{sid}/{token}#{k}"
            out.append(CropSource(
                sid, token, sample_id, img,
                eyes=((vals["eye_lx"], vals["eye_ly"]), (vals["eye_rx"], vals["eye_ry"])),
                roi=(vals["roi_x"], vals["roi_y"], vals["roi_w"], vals["roi_h"])))
    return out


def _geometry(src):
    (lx, ly), (rx, ry) = src.eyes
    dx, dy = rx - lx, ry - ly
    if dx == 0.0 and dy == 0.0:
        raise ValueError(f"coincident eyes in sample {src.sample_id}")
    rx0, ry0, rw, rh = src.roi
    if rw <= 0 or rh <= 0:
        raise ValueError(f"degenerate ROI in sample {src.sample_id}")
    ih, iw = src.image.shape[:2]
    x0 = max(0.0, rx0 - ROI_EXPANSION * rw)
    y0 = max(0.0, ry0 - ROI_EXPANSION * rh)
    x1 = min(float(iw), rx0 + rw + ROI_EXPANSION * rw)
    y1 = min(float(ih), ry0 + rh + ROI_EXPANSION * rh)
    theta = math.atan2(dy, dx)
    cx, cy = (lx + rx) / 2.0, (ly + ry) / 2.0
    return x0, y0, x1 - x0, y1 - y0, cx, cy, math.cos(theta), math.sin(theta)


def _bilinear(plane, sy, sx):
    """Bilinear sample with edge clamping (replicated border)."""
    h, w = plane.shape
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    return ((1 - fy) * (1 - fx) * plane[y0, x0]
            + (1 - fy) * fx * plane[y0, x1]
            + fy * (1 - fx) * plane[y1, x0]
            + fy * fx * plane[y1, x1])


def align_crop(src) -> np.ndarray:
    """Rotate, crop and resize one source to a 224x224 uint8 RGB crop."""
    x0, y0, w, h, cx, cy, c, s = _geometry(src)
    size = ALIGNED_SIZE
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    px = x0 + (jj + 0.5) * w / size - 0.5
    py = y0 + (ii + 0.5) * h / size - 0.5
    ux, uy = px - cx, py - cy
    sx = cx + c * ux - s * uy
    sy = cy + s * ux + c * uy
    img = src.image.astype(np.float64)
    out = np.empty((size, size, 3), dtype=np.uint8)
    for ch in range(3):
        vals = _bilinear(img[..., ch], sy, sx)
        out[..., ch] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return out


@dataclass(frozen=True)
class EnhancementMethod:
    kind: str
    params: dict = field(default_factory=dict)


def enhancement_of(tag, overrides=None) -> EnhancementMethod:
    kind = tag.strip().lower()
    if kind not in ENHANCEMENT_DEFAULTS:
        valid = ", ".join(sorted(ENHANCEMENT_DEFAULTS))
        raise ValueError(f"unknown enhancement {tag!r}; valid tags: {valid}")
    params = dict(ENHANCEMENT_DEFAULTS[kind])
    for key, val in (overrides or {}).items():
        if key not in params:
            raise ValueError(f"unknown parameter {key!r} for enhancement {kind!r}")
        params[key] = val
    return EnhancementMethod(kind, params)


def _retinex(pixels, sigma, low_pct, high_pct):
    img = pixels.astype(np.float64)
    out = np.empty_like(img)
    for ch in range(3):
        plane = img[..., ch]
        ratio = np.log(plane + 1.0) - np.log(gaussian_filter(plane, sigma) + 1.0)
        lo, hi = np.percentile(ratio, [low_pct, high_pct])
        if hi - lo < 1e-12:
            out[..., ch] = 127.5
        else:
            out[..., ch] = (np.clip(ratio, lo, hi) - lo) / (hi - lo) * 255.0
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


@njit(parallel=True, cache=True)
def _ace_kernel(plane, ny, nx, nvals, inv_dist, slope, sat):
    h, w = plane.shape
    out = np.zeros((h, w))
    m = ny.shape[0]
    for y in prange(h):
        for x in range(w):
            center = plane[y, x]
            acc = 0.0
            for k in range(m):
                qy = ny[k]
                qx = nx[k]
                if qy == y and qx == x:
                    continue
                diff = slope * (center - nvals[k])
                if diff > sat:
                    diff = sat
                elif diff < -sat:
                    diff = -sat
                acc += diff * inv_dist[y - qy + h, x - qx + w]
            out[y, x] = acc
    return out


def _ace(pixels, slope, saturation, subsample):
    img = pixels.astype(np.float64) / 255.0
    h, w = img.shape[:2]
    ys = np.arange(0, h, subsample)
    xs = np.arange(0, w, subsample)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    ny = gy.ravel().astype(np.int64)
    nx = gx.ravel().astype(np.int64)
    dy = np.arange(-h, h + 1)[:, None].astype(np.float64)
    dx = np.arange(-w, w + 1)[None, :].astype(np.float64)
    with np.errstate(divide="ignore"):
        inv_dist = 1.0 / np.sqrt(dy * dy + dx * dx)
    inv_dist[h, w] = 0.0
    out = np.empty_like(img)
    for ch in range(3):
        plane = np.ascontiguousarray(img[..., ch])
        nvals = plane[ny, nx]
        r = _ace_kernel(plane, ny, nx, nvals, inv_dist, slope, saturation)
        peak = np.max(np.abs(r))
        if peak == 0.0:
            out[..., ch] = 127.5
        else:
            out[..., ch] = 127.5 * (1.0 + r / peak)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _rgb_to_ycbcr(pixels):
    p = pixels.astype(np.float64)
    y = 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]
    cb = 128.0 + 0.564 * (p[..., 2] - y)
    cr = 128.0 + 0.713 * (p[..., 0] - y)
    return y, cb, cr


def _ycbcr_to_rgb(y, cb, cr):
    r = y + (cr - 128.0) / 0.713
    b = y + (cb - 128.0) / 0.564
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _equalization_map(values, clip_limit):
    hist = np.bincount(values.ravel(), minlength=256).astype(np.float64)
    n = values.size
    if clip_limit is not None and math.isfinite(clip_limit):
        cap = max(1.0, clip_limit * n / 256.0)
        excess = np.sum(np.maximum(hist - cap, 0.0))
        hist = np.minimum(hist, cap) + excess / 256.0
    cdf = np.cumsum(hist)
    return np.rint(cdf / n * 255.0)


def _clahe(pixels, tiles, clip_limit):
    y, cb, cr = _rgb_to_ycbcr(pixels)
    yq = np.clip(np.rint(y), 0, 255).astype(np.int64)
    h, w = yq.shape
    th, tw = h // tiles, w // tiles
    maps = np.empty((tiles, tiles, 256))
    for ty in range(tiles):
        for tx in range(tiles):
            block = yq[ty * th:(ty + 1) * th, tx * tw:(tx + 1) * tw]
            maps[ty, tx] = _equalization_map(block, clip_limit)
    yy = np.arange(h)[:, None] * np.ones((1, w))
    xx = np.ones((h, 1)) * np.arange(w)[None, :]
    fy = np.clip((yy - th / 2.0 + 0.5) / th, 0.0, tiles - 1.0)
    fx = np.clip((xx - tw / 2.0 + 0.5) / tw, 0.0, tiles - 1.0)
    t0y = np.clip(np.floor(fy).astype(np.int64), 0, tiles - 1)
    t0x = np.clip(np.floor(fx).astype(np.int64), 0, tiles - 1)
    t1y = np.minimum(t0y + 1, tiles - 1)
    t1x = np.minimum(t0x + 1, tiles - 1)
    wy = fy - t0y
    wx = fx - t0x
    lum = ((1 - wy) * (1 - wx) * maps[t0y, t0x, yq]
           + (1 - wy) * wx * maps[t0y, t1x, yq]
           + wy * (1 - wx) * maps[t1y, t0x, yq]
           + wy * wx * maps[t1y, t1x, yq])
    return _ycbcr_to_rgb(lum, cb, cr)


def enhance(pixels, method: EnhancementMethod) -> np.ndarray:
    """Apply one photometric enhancement to a uint8 RGB crop."""
    if method.kind == "none":
        return pixels
    if method.kind == "retinex":
        return _retinex(pixels, **method.params)
    if method.kind == "ace":
        return _ace(pixels, **method.params)
    if method.kind == "clahe":
        return _clahe(pixels, **method.params)
    raise ValueError(f"unknown enhancement kind {method.kind!r}")
