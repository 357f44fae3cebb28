import os

import pytest

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def smoke_manifest():
    return os.path.join(DATA, "smoke", "manifest.csv")


@pytest.fixture(scope="session")
def golden():
    import numpy as np
    return np.load(os.path.join(DATA, "golden.npz"))
