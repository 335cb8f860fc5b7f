import numpy as np
import pytest

from sbcformer.tensor import DTYPE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randt(rng, shape, lo=-1.0, hi=1.0):
    """Random float32 tensor with entries in [lo, hi]."""
    return (rng.uniform(lo, hi, size=shape)).astype(DTYPE)
