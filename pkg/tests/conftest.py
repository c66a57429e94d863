import numpy as np
import pytest

from rom._kernels import available_backends, get_backend
from rom.detector import DetectorConfig, init_params


@pytest.fixture(params=available_backends())
def kernel_backend(request):
    """Run kernel-touching tests against every compiled/fallback backend."""
    return get_backend(request.param)


@pytest.fixture
def small_params():
    return init_params(DetectorConfig(d=8, d_p=4, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
