import numpy as np
import pytest

from binfer import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per available kernel backend."""
    with kernels.use(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
