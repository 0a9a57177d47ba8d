import numpy as np
import pytest

from mflab.core import DensityModel, PhaseConfig, smooth_kernel


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def kernel2():
    """The smooth two-mode kernel used throughout the rate experiments."""
    return smooth_kernel([0.5, 0.2])


@pytest.fixture
def gauss_density():
    return DensityModel()


@pytest.fixture
def phase():
    return PhaseConfig(horizon=0.5)
