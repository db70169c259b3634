import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from dfast.config import tiny_config  # noqa: E402
from dfast.data import synth_generate  # noqa: E402
from dfast.tensor import default_dtype  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def tiny():
    return tiny_config()


@pytest.fixture(scope="session")
def small_dataset():
    """40 short trials matching the tiny model geometry's channel count."""
    return synth_generate(n_classes=2, n_subjects=2, trials_per_class=20, n_channels=4,
                          n_times=64, rate=64, seed=3)
