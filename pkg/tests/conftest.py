import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diswaps.simulate import HestonParams, JumpParams, ModelKind, ModelSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def gbm():
    return ModelSpec(ModelKind.GBM, 100.0, 0.2)


@pytest.fixture
def merton():
    return ModelSpec(ModelKind.MertonJump, 100.0, 0.2, jump=JumpParams(1.0, -0.1, 0.15))


@pytest.fixture
def heston():
    return ModelSpec(ModelKind.Heston, 100.0, 0.2, heston=HestonParams(2.0, 0.04, 0.3, -0.7, 0.04))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
