"""Subjects, samples, synthetic data generation, and split planning.

The split protocol: subjects are shuffled with a seeded PCG64 generator
and partitioned 60/20/20 into train/dev/eval; all ID x selfie pairs are
generated within each set, and train subjects are further partitioned
into 3 cross-validation folds. 100 derived-seed splits reproduce the
repeated-split protocol.
"""

import csv
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, zoom


class Domain(Enum):
    ID_DOCUMENT = "id"
    SELFIE = "selfie"


class DatasetError(ValueError):
    pass


class ManifestError(DatasetError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"manifest row {row}: {message}")


def splitmix64(x):
    """64-bit mixing step of splitmix64; platform-independent."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master_seed, *indices):
    """Stated 64-bit mix of (master_seed, index...)."""
    s = master_seed & 0xFFFFFFFFFFFFFFFF
    for idx in indices:
        s = splitmix64(s ^ (idx & 0xFFFFFFFFFFFFFFFF))
    return s


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class FaceSample:
    subject_id: str
    domain: Domain
    image: np.ndarray          # (h, w, 3) uint8
    roi: tuple                 # (x, y, w, h)
    eyes: tuple                # ((lx, ly), (rx, ry))
    sample_id: str

    def __post_init__(self):
        img = self.image
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise DatasetError(f"{self.sample_id}: image must be 8-bit RGB")
        img.setflags(write=False)
        h, w = img.shape[:2]
        rx, ry, rw, rh = self.roi
        # clamp ROI to image bounds
        cx0, cy0 = max(0.0, rx), max(0.0, ry)
        cx1, cy1 = min(float(w), rx + rw), min(float(h), ry + rh)
        if cx1 <= cx0 or cy1 <= cy0:
            raise DatasetError(f"{self.sample_id}: ROI lies outside image bounds")
        object.__setattr__(self, "roi", (cx0, cy0, cx1 - cx0, cy1 - cy0))
        (lx, ly), (rx_, ry_) = self.eyes
        if not (lx < rx_):
            raise DatasetError(f"{self.sample_id}: left eye x must be < right eye x")
        for ex, ey in self.eyes:
            if not (cx0 <= ex <= cx1 and cy0 <= ey <= cy1):
                raise DatasetError(f"{self.sample_id}: eye ({ex}, {ey}) outside ROI")

    @property
    def domain_tag(self):
        return self.domain.value


@dataclass(frozen=True)
class Pair:
    id_sample: str
    selfie_sample: str
    id_subject: str
    selfie_subject: str

    @property
    def genuine(self):
        return self.id_subject == self.selfie_subject


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_subjects: tuple
    dev_subjects: tuple
    eval_subjects: tuple
    cv_folds: tuple            # 3 tuples of subject ids
    train_pairs: tuple
    dev_pairs: tuple
    eval_pairs: tuple

    def fold_pairs(self, fold_idx):
        """Within-fold pairs: both subjects belong to the fold."""
        fold = set(self.cv_folds[fold_idx])
        return tuple(p for p in self.train_pairs
                     if p.id_subject in fold and p.selfie_subject in fold)

    def to_dict(self):
        return {
            "seed": self.seed,
            "train_subjects": list(self.train_subjects),
            "dev_subjects": list(self.dev_subjects),
            "eval_subjects": list(self.eval_subjects),
            "cv_folds": [list(f) for f in self.cv_folds],
        }


class SampleIndex:
    """Lookup from subject to samples per domain."""

    def __init__(self, samples):
        self.by_id = {}
        self.per_subject = {}
        for s in samples:
            if s.sample_id in self.by_id:
                raise DatasetError(f"duplicate sample id {s.sample_id}")
            self.by_id[s.sample_id] = s
            self.per_subject.setdefault(s.subject_id, {Domain.ID_DOCUMENT: [], Domain.SELFIE: []})
            self.per_subject[s.subject_id][s.domain].append(s.sample_id)

    def subjects(self):
        return sorted(self.per_subject)

    def samples_of(self, subject, domain):
        return self.per_subject[subject][domain]


def _cross_pairs(subject_set, index):
    """All ID x selfie sample pairs among the given subjects."""
    pairs = []
    for sid in subject_set:
        for tid in subject_set:
            if index is None:
                pairs.append(Pair(f"{sid}/id", f"{tid}/selfie", sid, tid))
            else:
                for a in index.samples_of(sid, Domain.ID_DOCUMENT):
                    for b in index.samples_of(tid, Domain.SELFIE):
                        pairs.append(Pair(a, b, sid, tid))
    return tuple(pairs)


def plan_split(subjects, seed, index=None) -> SplitPlan:
    """One 60/20/20 subject-disjoint split with pair lists and CV folds.

    Sizes are floor(0.6u) / floor(0.2u) / remainder. Without an index,
    each subject is assumed to have one sample per domain with ids
    "<subject>/id" and "<subject>/selfie".
    """
    subjects = sorted(set(subjects))
    u = len(subjects)
    if u < 5:
        raise DatasetError(f"need at least 5 subjects, got {u}")
    order = _rng(seed).permutation(u)
    shuffled = [subjects[i] for i in order]
    n_train = int(math.floor(0.6 * u))
    n_dev = int(math.floor(0.2 * u))
    train = tuple(shuffled[:n_train])
    dev = tuple(shuffled[n_train:n_train + n_dev])
    evl = tuple(shuffled[n_train + n_dev:])
    base, rem = divmod(n_train, 3)
    folds, start = [], 0
    for k in range(3):
        size = base + (1 if k < rem else 0)
        folds.append(tuple(train[start:start + size]))
        start += size
    return SplitPlan(
        seed=seed,
        train_subjects=train, dev_subjects=dev, eval_subjects=evl,
        cv_folds=tuple(folds),
        train_pairs=_cross_pairs(train, index),
        dev_pairs=_cross_pairs(dev, index),
        eval_pairs=_cross_pairs(evl, index),
    )


def plan_many_splits(subjects, master_seed, n=100, index=None):
    """n reproducible splits with seeds derived from (master_seed, i)."""
    return [plan_split(subjects, derive_seed(master_seed, i), index) for i in range(n)]


@dataclass(frozen=True)
class DomainShiftParams:
    """Domain perturbations: ID documents get a warm color cast, blur and
    a downscale-upscale cycle; selfies get a lateral illumination
    gradient and additive Gaussian noise."""
    color_cast: float = 1.0
    blur_sigma: float = 1.2
    resample_factor: float = 2.0
    illumination: float = 0.4
    noise_sigma: float = 8.0

    @classmethod
    def none(cls):
        return cls(color_cast=0.0, blur_sigma=0.0, resample_factor=1.0,
                   illumination=0.0, noise_sigma=0.0)

    @classmethod
    def from_dict(cls, d):
        if d in (None, "none"):
            return cls.none()
        if d == "default":
            return cls()
        return cls(**d)


_SYNTH_SIZE = 144


def _render_identity(rng, size):
    """Procedural face-like pattern for one latent identity.

    Returns (rgb float image in [0, 255], eye coordinates).
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cx = cy = size / 2.0

    skin = np.array([196, 160, 130]) + rng.uniform(-28, 28, size=3)
    img = np.ones((size, size, 3)) * (skin * 0.35)

    # head ellipse
    ax = size * rng.uniform(0.30, 0.36)
    ay = size * rng.uniform(0.36, 0.42)
    head = np.exp(-(((xx - cx) / ax) ** 4 + ((yy - cy) / ay) ** 4))
    img += head[..., None] * (skin * 0.65)

    # per-identity texture: low-frequency random field modulating the face
    grid = rng.uniform(0.55, 1.45, size=(7, 7))
    tex = zoom(grid, size / 7.0, order=1)[:size, :size]
    img *= (0.6 + 0.4 * tex)[..., None]

    def blob(bx, by, sx, sy, color):
        g = np.exp(-(((xx - bx) / sx) ** 2 + ((yy - by) / sy) ** 2))
        return g[..., None] * np.asarray(color)

    eye_y = cy - size * rng.uniform(0.06, 0.12)
    eye_dx = size * rng.uniform(0.13, 0.19)
    tilt = size * rng.uniform(-0.03, 0.03)
    lx, ly = cx - eye_dx, eye_y - tilt
    rx, ry = cx + eye_dx, eye_y + tilt
    eye_s = size * rng.uniform(0.025, 0.045)
    eye_color = -np.array([150, 150, 150]) + rng.uniform(-30, 30, size=3)
    img += blob(lx, ly, eye_s, eye_s * 0.7, eye_color)
    img += blob(rx, ry, eye_s, eye_s * 0.7, eye_color)

    nose_y = cy + size * rng.uniform(0.02, 0.08)
    img += blob(cx + rng.uniform(-2, 2), nose_y, size * 0.03, size * 0.06,
                rng.uniform(-60, 10, size=3))
    mouth_y = cy + size * rng.uniform(0.16, 0.24)
    img += blob(cx + rng.uniform(-3, 3), mouth_y, size * rng.uniform(0.08, 0.13),
                size * 0.03, np.array([40, -60, -40]) + rng.uniform(-25, 25, size=3))

    return np.clip(img, 0, 255), ((lx, ly), (rx, ry))


def _render_id_document(base, shift, rng):
    img = base.copy()
    cast = shift.color_cast
    img[..., 0] *= 1.0 + 0.30 * cast
    img[..., 1] *= 1.0 + 0.05 * cast
    img[..., 2] *= 1.0 - 0.30 * cast
    if shift.blur_sigma > 0:
        for ch in range(3):
            img[..., ch] = gaussian_filter(img[..., ch], shift.blur_sigma)
    if shift.resample_factor > 1.0:
        size = img.shape[0]
        small = max(8, int(round(size / shift.resample_factor)))
        for ch in range(3):
            down = zoom(img[..., ch], small / size, order=1)
            img[..., ch] = zoom(down, size / down.shape[0], order=1)[:size, :size]
    return img


def _render_selfie(base, shift, rng):
    img = base.copy()
    size = img.shape[1]
    if shift.illumination != 0.0:
        ramp = 1.0 + shift.illumination * (np.arange(size) / size - 0.5)
        img *= ramp[None, :, None]
    if shift.noise_sigma > 0:
        img += rng.normal(0.0, shift.noise_sigma, size=img.shape)
    return img


def synthesize_dataset(n_subjects, seed, shift=None):
    """Deterministic synthetic cross-domain dataset, two samples per subject."""
    if n_subjects < 3:
        raise DatasetError("need at least 3 subjects (protocol uses 3 CV folds)")
    shift = shift if shift is not None else DomainShiftParams()
    samples = []
    size = _SYNTH_SIZE
    roi = (size * 0.12, size * 0.12, size * 0.76, size * 0.76)
    for k in range(n_subjects):
        sid = f"s{k:03d}"
        base, eyes = _render_identity(_rng(derive_seed(seed, k, 0)), size)
        id_img = _render_id_document(base, shift, _rng(derive_seed(seed, k, 1)))
        self_img = _render_selfie(base, shift, _rng(derive_seed(seed, k, 2)))
        for dom, img in ((Domain.ID_DOCUMENT, id_img), (Domain.SELFIE, self_img)):
            raster = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            samples.append(FaceSample(sid, dom, raster, roi, eyes,
                                      sample_id=f"{sid}/{dom.value}"))
    return samples


MANIFEST_COLUMNS = ["subject_id", "path", "domain", "eye_lx", "eye_ly",
                    "eye_rx", "eye_ry", "roi_x", "roi_y", "roi_w", "roi_h"]

_DOMAIN_OF_TOKEN = {"id": Domain.ID_DOCUMENT, "selfie": Domain.SELFIE}


def ingest_manifest(manifest_path):
    """Load FaceSamples from a manifest CSV; errors name the failing row."""
    samples = []
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
            if token not in _DOMAIN_OF_TOKEN:
                raise ManifestError(rownum, f"unknown domain {token!r} (expected id|selfie)")
            domain = _DOMAIN_OF_TOKEN[token]
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
            try:
                samples.append(FaceSample(
                    sid, domain, img,
                    roi=(vals["roi_x"], vals["roi_y"], vals["roi_w"], vals["roi_h"]),
                    eyes=((vals["eye_lx"], vals["eye_ly"]), (vals["eye_rx"], vals["eye_ry"])),
                    sample_id=sample_id))
            except DatasetError as exc:
                raise ManifestError(rownum, str(exc)) from exc
    return samples


def save_dataset(samples, out_dir):
    """Write samples as PNGs plus a manifest.csv; returns the manifest path."""
    img_dir = os.path.join(out_dir, "img")
    os.makedirs(img_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for s in samples:
            fname = s.sample_id.replace("/", "_").replace("#", "_") + ".png"
            Image.fromarray(s.image).save(os.path.join(img_dir, fname))
            (lx, ly), (rx, ry) = s.eyes
            x, y, w, h = s.roi
            writer.writerow([s.subject_id, f"img/{fname}", s.domain_tag,
                             lx, ly, rx, ry, x, y, w, h])
    return manifest
