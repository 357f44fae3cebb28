"""Feature vectors: built-in handcrafted embedders and external deep-layer files.

Built-ins (block LBP histograms and block DCT coefficients) make the full
pipeline runnable with no external dependency. Externally computed layer
activations arrive via the EMB1 binary format; files store pre-activation
values, and the rectified variants (fc6 = fc6n + ReLU, fc7 = fc7n + ReLU)
are derived at load time.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn

# layer tag -> (needs rectify, underlying file tag, required dim or None)
LAYER_TABLE = {
    "fc6n": (False, "fc6n", 4096),
    "fc6": (True, "fc6n", 4096),
    "fc7n": (False, "fc7n", 4096),
    "fc7": (True, "fc7n", 4096),
    "fc8": (False, "fc8", 2622),
    "lbp": (False, None, 3776),
    "dct": (False, None, 7840),
}

BUILTIN_LAYERS = ("lbp", "dct")
EXTERNAL_LAYERS = ("fc6n", "fc6", "fc7n", "fc7", "fc8")


class Emb1Error(ValueError):
    """Malformed EMB1 file."""


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("feature vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite feature values (sample {self.meta.get('sample_id')})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.shape[0]


def rectify(v: FeatureVector) -> FeatureVector:
    """Element-wise max(0, x); marks the vector as rectified."""
    meta = dict(v.meta)
    meta["rectified"] = True
    return FeatureVector(np.maximum(v.values, 0.0), meta)


def sparsity(v: FeatureVector) -> float:
    """Fraction of exactly-zero entries."""
    return float(np.count_nonzero(v.values == 0.0)) / v.dim


def _to_gray(pixels):
    # BT.601 luma, float in [0, 255]
    p = pixels.astype(np.float64)
    return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


def _uniform_lbp_table():
    """Map 8-bit LBP code -> uniform pattern bin (58 uniform + 1 other)."""
    table = np.empty(256, dtype=np.int64)
    uniform_id = 0
    ids = {}
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        transitions = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
        if transitions <= 2:
            ids[code] = uniform_id
            uniform_id += 1
    for code in range(256):
        table[code] = ids.get(code, 58)
    return table


_LBP_TABLE = _uniform_lbp_table()

# (dy, dx, bit) for the 8 neighbors at radius 1, starting east, CCW
_LBP_NEIGHBORS = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]


def lbp_codes(gray):
    """Per-pixel 8-neighbor LBP codes on an edge-padded image."""
    padded = np.pad(gray, 1, mode="edge")
    h, w = gray.shape
    codes = np.zeros((h, w), dtype=np.int64)
    center = padded[1:h + 1, 1:w + 1]
    for bit, (dy, dx) in enumerate(_LBP_NEIGHBORS):
        nb = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        codes |= (nb >= center).astype(np.int64) << bit
    return codes


def embed_lbp(face) -> FeatureVector:
    """Uniform LBP (8 neighbors, radius 1) histograms over an 8x8 cell grid.

    224x224 input -> 64 cells of 28x28, 59 bins each -> d = 3776. Raw
    counts; normalization is a separate pipeline stage.
    """
    gray = _to_gray(face.pixels)
    bins = _LBP_TABLE[lbp_codes(gray)]
    h, w = bins.shape
    cells = 8
    ch, cw = h // cells, w // cells
    feats = np.empty((cells * cells, 59))
    k = 0
    for gy in range(cells):
        for gx in range(cells):
            block = bins[gy * ch:(gy + 1) * ch, gx * cw:(gx + 1) * cw]
            feats[k] = np.bincount(block.ravel(), minlength=59)
            k += 1
    return FeatureVector(feats.ravel(), _face_meta(face, "lbp"))


def _zigzag_order(n=8):
    idx = sorted(((y, x) for y in range(n) for x in range(n)),
                 key=lambda p: (p[0] + p[1], p[0] if (p[0] + p[1]) % 2 else p[1]))
    return idx


_ZIGZAG10 = _zigzag_order()[:10]


def embed_dct(face) -> FeatureVector:
    """Orthonormal 2-D DCT-II per non-overlapping 8x8 block, first 10
    zigzag coefficients kept. 224x224 input -> 28x28 blocks -> d = 7840."""
    gray = _to_gray(face.pixels)
    h, w = gray.shape
    by, bx = h // 8, w // 8
    blocks = gray[:by * 8, :bx * 8].reshape(by, 8, bx, 8).transpose(0, 2, 1, 3)
    coeffs = dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    ys = [p[0] for p in _ZIGZAG10]
    xs = [p[1] for p in _ZIGZAG10]
    feats = coeffs[:, :, ys, xs]
    return FeatureVector(feats.reshape(-1), _face_meta(face, "dct"))


def _face_meta(face, tag):
    return {
        "embedder": tag,
        "layer": tag,
        "rectified": False,
        "sample_id": getattr(face, "sample_id", None),
        "domain": getattr(face, "domain_tag", None),
        "enhancement": getattr(face, "enhancement", None),
    }


BUILTIN_EMBEDDERS = {"lbp": embed_lbp, "dct": embed_dct}

_MAGIC = b"EMB1"
_VERSION = 1
_DOMAIN_CODES = {"id": 0, "selfie": 1}
_DOMAIN_TAGS = {v: k for k, v in _DOMAIN_CODES.items()}


def write_emb1(path, layer_tag, records):
    """Write an EMB1 file.

    records: iterable of (sample_id, domain_tag, vector). All vectors
    must share one dimension; exactly one layer per file.
    """
    records = list(records)
    if not records:
        raise Emb1Error("no records to write")
    dim = len(records[0][2])
    tag_bytes = layer_tag.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(struct.pack("<B", len(tag_bytes)))
        fh.write(tag_bytes)
        fh.write(struct.pack("<II", dim, len(records)))
        for sample_id, domain_tag, vec in records:
            vec = np.asarray(vec, dtype=np.float32)
            if vec.shape != (dim,):
                raise Emb1Error(f"record {sample_id!r} has dim {vec.shape} != {dim}")
            sid = sample_id.encode("utf-8")
            fh.write(struct.pack("<H", len(sid)))
            fh.write(sid)
            fh.write(struct.pack("<B", _DOMAIN_CODES[domain_tag]))
            fh.write(vec.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise Emb1Error(f"truncated {what} at byte offset {fh.tell() - len(buf)}")
    return buf


def load_external(emb_path, layer: str) -> dict:
    """Load one EMB1 file for the requested layer tag.

    Returns {(sample_id, domain_tag): FeatureVector}. Vectors are
    returned as stored (pre-activation); if the requested layer implies
    rectification (fc6, fc7) it is applied here.
    """
    if layer not in LAYER_TABLE or LAYER_TABLE[layer][1] is None:
        raise ValueError(f"not an external layer: {layer!r}")
    needs_relu, file_tag, want_dim = LAYER_TABLE[layer]
    with open(emb_path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise Emb1Error(f"bad magic in {emb_path}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != _VERSION:
            raise Emb1Error(f"unsupported EMB1 version {version}")
        (tag_len,) = struct.unpack("<B", _read_exact(fh, 1, "tag length"))
        tag = _read_exact(fh, tag_len, "layer tag").decode("ascii")
        if tag != file_tag:
            raise Emb1Error(f"layer mismatch: file declares {tag!r}, "
                            f"request {layer!r} needs {file_tag!r}")
        dim, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if want_dim is not None and dim != want_dim:
            raise Emb1Error(f"layer {tag!r} requires dim {want_dim}, file has {dim}")
        out = {}
        for _ in range(count):
            (sid_len,) = struct.unpack("<H", _read_exact(fh, 2, "record id length"))
            sid = _read_exact(fh, sid_len, "record id").decode("utf-8")
            (dom_code,) = struct.unpack("<B", _read_exact(fh, 1, "record domain"))
            if dom_code not in _DOMAIN_TAGS:
                raise Emb1Error(f"unknown domain code {dom_code} in record {sid!r}")
            payload = _read_exact(fh, dim * 4, f"record payload ({sid!r})")
            vec = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            if not np.all(np.isfinite(vec)):
                raise Emb1Error(f"non-finite payload in record {sid!r}")
            key = (sid, _DOMAIN_TAGS[dom_code])
            if key in out:
                raise Emb1Error(f"duplicate record {key}")
            fv = FeatureVector(vec, {"embedder": "external", "layer": layer,
                                     "rectified": False, "sample_id": sid,
                                     "domain": _DOMAIN_TAGS[dom_code]})
            out[key] = rectify(fv) if needs_relu else fv
        extra = fh.read(1)
        if extra:
            raise Emb1Error(f"trailing bytes after {count} records")
    return out
