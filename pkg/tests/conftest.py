import numpy as np
import pytest

from crossface.dataset import synthesize_dataset
from crossface.embedding import FeatureVector
from crossface.imaging import AlignedFace, normalize_geometry


def fv(values, **meta):
    return FeatureVector(np.asarray(values, dtype=np.float64), meta)


@pytest.fixture(scope="session")
def small_samples():
    return synthesize_dataset(8, seed=7)


@pytest.fixture(scope="session")
def one_face(small_samples):
    return normalize_geometry(small_samples[0])


@pytest.fixture()
def noise_face():
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    return AlignedFace(pixels, "noise/id", "id")
