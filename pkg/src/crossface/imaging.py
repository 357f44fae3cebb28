"""Geometric face normalization and photometric enhancement.

Geometry: the annotated ROI is expanded by 22% per side (clamped), the
image is rotated about the eye midpoint so the eye line is horizontal,
and the expanded ROI is cropped and resized to 224x224 with bilinear
interpolation (implemented as a single combined resampling pass).

Enhancement: single-scale retinex, automatic color equalization (ACE)
with slope-clipped difference kernel and white-patch scaling, and CLAHE
on the luma plane. Parameter defaults are config-overridable.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.ndimage import gaussian_filter, map_coordinates

ALIGNED_SIZE = 224
ROI_EXPANSION = 0.22

ENHANCEMENT_DEFAULTS = {
    "none": {},
    "retinex": {"sigma": 100.0, "low_pct": 1.0, "high_pct": 99.0},
    "ace": {"slope": 5.0, "saturation": 1.0, "subsample": 2},
    "clahe": {"tiles": 8, "clip_limit": 2.0},
}


@dataclass(frozen=True)
class AlignedFace:
    """224x224 RGB face crop with provenance."""
    pixels: np.ndarray
    sample_id: str
    domain_tag: str
    enhancement: str = "none"

    def __post_init__(self):
        p = self.pixels
        if p.shape != (ALIGNED_SIZE, ALIGNED_SIZE, 3) or p.dtype != np.uint8:
            raise ValueError(f"aligned face must be {ALIGNED_SIZE}x{ALIGNED_SIZE}x3 uint8, "
                             f"got {p.shape} {p.dtype}")
        p.setflags(write=False)


@dataclass(frozen=True)
class EnhancementMethod:
    kind: str
    params: dict = field(default_factory=dict)


def enhancement_of(tag: str, overrides: dict | None = None) -> EnhancementMethod:
    """Parse an enhancement tag (case-insensitive) into a method with defaults."""
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


def geometry_transform(sample):
    """Return (x0, y0, w, h, cx, cy, cos, sin) describing the output grid.

    Output pixel (i, j) samples the source at
    (cx, cy) + R(theta) . (rect_point - (cx, cy)), where rect_point lies
    on the expanded-ROI grid and theta is the eye-line angle.
    """
    (lx, ly), (rx, ry) = sample.eyes
    dx, dy = rx - lx, ry - ly
    if dx == 0.0 and dy == 0.0:
        raise ValueError(f"coincident eyes in sample {sample.sample_id}")
    rx0, ry0, rw, rh = sample.roi
    if rw <= 0 or rh <= 0:
        raise ValueError(f"degenerate ROI in sample {sample.sample_id}")
    ih, iw = sample.image.shape[:2]
    x0 = max(0.0, rx0 - ROI_EXPANSION * rw)
    y0 = max(0.0, ry0 - ROI_EXPANSION * rh)
    x1 = min(float(iw), rx0 + rw + ROI_EXPANSION * rw)
    y1 = min(float(ih), ry0 + rh + ROI_EXPANSION * rh)
    theta = math.atan2(dy, dx)
    cx, cy = (lx + rx) / 2.0, (ly + ry) / 2.0
    return x0, y0, x1 - x0, y1 - y0, cx, cy, math.cos(theta), math.sin(theta)


def source_coords(sample, size=ALIGNED_SIZE):
    """Source-image sampling coordinates (ys, xs) for each output pixel."""
    x0, y0, w, h, cx, cy, c, s = geometry_transform(sample)
    jj, ii = np.meshgrid(np.arange(size), np.arange(size))
    px = x0 + (jj + 0.5) * w / size - 0.5
    py = y0 + (ii + 0.5) * h / size - 0.5
    ux, uy = px - cx, py - cy
    sx = cx + c * ux - s * uy
    sy = cy + s * ux + c * uy
    return sy, sx


def project_point(sample, qx, qy, size=ALIGNED_SIZE):
    """Map a source-image point into output crop coordinates (x, y)."""
    x0, y0, w, h, cx, cy, c, s = geometry_transform(sample)
    ux, uy = qx - cx, qy - cy
    # inverse rotation: rotated-frame position of the source point
    px = cx + c * ux + s * uy
    py = cy - s * ux + c * uy
    ox = (px - x0 + 0.5) * size / w - 0.5
    oy = (py - y0 + 0.5) * size / h - 0.5
    return ox, oy


def normalize_geometry(sample) -> AlignedFace:
    """Rotate, crop and resize one FaceSample to a 224x224 aligned crop."""
    sy, sx = source_coords(sample)
    out = np.empty((ALIGNED_SIZE, ALIGNED_SIZE, 3), dtype=np.uint8)
    img = sample.image.astype(np.float64)
    for ch in range(3):
        vals = map_coordinates(img[..., ch], [sy, sx], order=1, mode="nearest")
        out[..., ch] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return AlignedFace(out, sample.sample_id, sample.domain_tag)


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


def equalization_map(values, clip_limit=None):
    """Histogram-equalization LUT for one block of uint8 values.

    With a finite clip limit each bin is capped at
    clip_limit * n / 256 and the excess is redistributed uniformly.
    """
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
            maps[ty, tx] = equalization_map(block, clip_limit)
    # bilinear interpolation between tile mappings, tiles anchored at centers
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


def enhance(face: AlignedFace, method: EnhancementMethod) -> AlignedFace:
    """Apply one photometric enhancement; deterministic in (input, params)."""
    if method.kind == "none":
        return AlignedFace(face.pixels, face.sample_id, face.domain_tag, "none")
    if method.kind == "retinex":
        out = _retinex(face.pixels, **method.params)
    elif method.kind == "ace":
        out = _ace(face.pixels, **method.params)
    elif method.kind == "clahe":
        out = _clahe(face.pixels, **method.params)
    else:
        raise ValueError(f"unknown enhancement kind {method.kind!r}")
    return AlignedFace(out, face.sample_id, face.domain_tag, method.kind)
