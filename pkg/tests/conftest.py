import numpy as np
import pytest

from lpvuq import _kernels


@pytest.fixture(scope="session", autouse=True)
def _compiled_kernels():
    # compile the numba kernels once so individual tests see steady-state timing
    _kernels.warmup()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
