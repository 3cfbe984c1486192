import numpy as np
import pytest

from stagesynth.ema import EmaConfig
from stagesynth.schedule import build_linear_schedule


@pytest.fixture(scope="session")
def sched1000():
    return build_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def ema1000():
    return EmaConfig(1000, 200)


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)
