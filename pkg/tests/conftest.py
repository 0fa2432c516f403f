"""
Shared fixtures for the MEMS transmission test suite
"""

import numpy as np
import pytest

from app.analytics import catalogue
from app.analytics.geometry import DeflectionProfile, PhysicalParams
from app.analytics.transmission import TransmissionSolver


@pytest.fixture
def base_params():
    """L = H = d = 1, sigma1 = 1, sigma2 = 2, V = 1, m = 3"""
    return PhysicalParams()


@pytest.fixture
def small_solver(base_params):
    """Model boundary data on a 16 x (8 + 8) mesh"""
    return TransmissionSolver.for_params(base_params, 16, 8, 8)


@pytest.fixture
def medium_solver(base_params):
    """Model boundary data on a 32 x (16 + 16) mesh"""
    return TransmissionSolver.for_params(base_params, 32, 16, 16)


@pytest.fixture
def flat_profile(base_params):
    return DeflectionProfile.flat(base_params, 16)


@pytest.fixture
def curved_profile(base_params):
    """u = -0.1 (1 + cos(pi x))/2 on 16 Hermite elements"""
    return catalogue.build_deflection(base_params, "cosine", -0.1, 16)


@pytest.fixture
def quartic():
    """u = 0.1 (1 - x^2)^2 and its derivative"""
    return (lambda x: 0.1 * (1 - np.asarray(x) ** 2) ** 2,
            lambda x: -0.4 * np.asarray(x) * (1 - np.asarray(x) ** 2))
