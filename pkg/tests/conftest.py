import numpy as np
import pytest

from nasfas.tensor import default_dtype


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
