import numpy as np
import pytest

from levylab import rng as lrng


@pytest.fixture
def scratch_rng():
    return lrng.stream(12345, namespace=lrng.SCRATCH)


def normal_reference(seed: int, size: int) -> np.ndarray:
    """Independent standard-normal sample for two-sample comparisons."""
    return lrng.stream(seed, namespace=lrng.SCRATCH).standard_normal(size)
