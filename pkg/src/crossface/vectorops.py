"""Feature normalization and pair combination operators.

All operators act on FeatureVector values and keep the dimension d of
their inputs. Cross-correlation is computed over non-negative lags with
zero padding; phase correlation normalizes the product spectrum by its
global L2 norm (no conjugation), with the classical conjugated variant
available behind a flag.
"""

from enum import Enum

import numpy as np

from .embedding import FeatureVector


class NormMethod(Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"
    Z = "z"


class CombineMethod(Enum):
    ABS_SUB = "abssub"
    MULT = "mult"
    CROSS_CORR = "crosscorr"
    PHASE_CORR = "phasecorr"


class DegenerateVector(ValueError):
    """Zero norm or zero variance: the vector carries no information."""


class DegenerateSpectrum(ValueError):
    """Product spectrum is identically zero in phase correlation."""


def norm_method_of(tag):
    try:
        return NormMethod(tag.strip().lower())
    except ValueError:
        valid = ", ".join(m.value for m in NormMethod)
        raise ValueError(f"unknown normalization {tag!r}; valid: {valid}") from None


def combine_method_of(tag):
    try:
        return CombineMethod(tag.strip().lower())
    except ValueError:
        valid = ", ".join(m.value for m in CombineMethod)
        raise ValueError(f"unknown combination {tag!r}; valid: {valid}") from None


def normalize(v: FeatureVector, method: NormMethod) -> FeatureVector:
    """Normalize a feature vector in place-of-copy.

    L1/L2 divide by the corresponding norm (sparsity and sign preserved),
    Z subtracts the vector's own mean and divides by its population
    standard deviation. NONE is the identity.
    """
    x = v.values
    if method is NormMethod.NONE:
        return v
    if method is NormMethod.L1:
        s = np.sum(np.abs(x))
        if s == 0.0:
            raise DegenerateVector(f"zero L1 norm for sample {v.meta.get('sample_id')}")
        out = x / s
    elif method is NormMethod.L2:
        s = np.sqrt(np.sum(x * x))
        if s == 0.0:
            raise DegenerateVector(f"zero L2 norm for sample {v.meta.get('sample_id')}")
        out = x / s
    elif method is NormMethod.Z:
        mu = np.mean(x)
        sigma = np.std(x)  # population, no Bessel correction
        if sigma == 0.0:
            raise DegenerateVector(f"zero variance for sample {v.meta.get('sample_id')}")
        out = (x - mu) / sigma
    else:  # pragma: no cover
        raise ValueError(method)
    meta = dict(v.meta)
    meta["normalization"] = method.value
    return FeatureVector(out, meta)


# Direct cross-correlation is kept for small d so that test oracles can
# be matched exactly; the FFT path takes over above this size.
_DIRECT_XCORR_MAX = 256


def _xcorr_direct(a, b):
    d = a.shape[0]
    out = np.zeros(d)
    for i in range(d):
        acc = 0.0
        for j in range(d - i):
            acc += a[j] * b[j + i]
        out[i] = acc
    return out


def _xcorr_fft(a, b):
    d = a.shape[0]
    n = 1 << (2 * d - 1).bit_length()
    fa = np.fft.rfft(a, n)
    fb = np.fft.rfft(b, n)
    full = np.fft.irfft(np.conj(fa) * fb, n)
    return full[:d].copy()


def combine(a: FeatureVector, b: FeatureVector, method: CombineMethod,
            conjugate_phase: bool = False) -> FeatureVector:
    """Combine an (ID, selfie) vector pair into one d-dimensional feature.

    conjugate_phase switches phase correlation to the classical variant
    (conjugated spectrum, element-wise magnitude normalization).
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    x, y = a.values, b.values
    if method is CombineMethod.ABS_SUB:
        out = np.abs(x - y)
    elif method is CombineMethod.MULT:
        out = x * y
    elif method is CombineMethod.CROSS_CORR:
        if a.dim <= _DIRECT_XCORR_MAX:
            out = _xcorr_direct(x, y)
        else:
            out = _xcorr_fft(x, y)
    elif method is CombineMethod.PHASE_CORR:
        fx = np.fft.fft(x)
        fy = np.fft.fft(y)
        if conjugate_phase:
            g = np.conj(fx) * fy
            mag = np.abs(g)
            if not np.any(mag > 0.0):
                raise DegenerateSpectrum("product spectrum is zero")
            out = np.real(np.fft.ifft(g / np.maximum(mag, np.finfo(float).tiny)))
        else:
            g = fx * fy
            norm = np.sqrt(np.sum(np.abs(g) ** 2))
            if norm == 0.0:
                raise DegenerateSpectrum("product spectrum is zero")
            out = np.real(np.fft.ifft(g / norm))
    else:  # pragma: no cover
        raise ValueError(method)
    meta = {
        "combination": method.value,
        "embedder": a.meta.get("embedder"),
        "layer": a.meta.get("layer"),
        "pair": (a.meta.get("sample_id"), b.meta.get("sample_id")),
    }
    return FeatureVector(out, meta)


def dft(x) -> np.ndarray:
    """Unnormalized forward DFT: X_k = sum_n x_n exp(-2 pi i k n / N)."""
    x = np.asarray(x)
    if x.shape[0] < 1:
        raise ValueError("empty sequence")
    return np.fft.fft(x)


def idft(c) -> np.ndarray:
    """Inverse DFT with 1/N normalization; returns a complex sequence."""
    c = np.asarray(c)
    if c.shape[0] < 1:
        raise ValueError("empty sequence")
    return np.fft.ifft(c)
