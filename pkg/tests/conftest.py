import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, height=None, width=None):
    h = height or int(rng.integers(4, 24))
    w = width or int(rng.integers(4, 24))
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def unit_vector(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)
