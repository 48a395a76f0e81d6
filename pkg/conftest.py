"""
Shared fixtures for the OU lab tests
"""

import numpy as np
import pytest

from levy import JumpLaw, LevyConfig
from spectral_core import SequenceModel, SpectralModel

M1_DIM = 8


def m1_arrays(dim: int = M1_DIM):
    n = np.arange(1, dim + 1, dtype=float)
    return n ** 2, n ** 2 + 1.0, n ** -2.0


@pytest.fixture
def m1():
    """a_n = n^2, ã_n = n^2 + 1, q_n = n^-2 on eight modes"""
    a, a_tilde, q = m1_arrays()
    return SpectralModel(a=a, a_tilde=a_tilde, q=q)


@pytest.fixture
def m1_levy():
    """Gaussian noise plus unit-rate jumps with sigma_n = 1/n"""
    n = np.arange(1, M1_DIM + 1, dtype=float)
    return LevyConfig(np.zeros(M1_DIM), gaussian_enabled=True, rate_lambda=1.0, jump_law=JumpLaw.gaussian(1.0 / n))


@pytest.fixture
def pure_jump_levy():
    n = np.arange(1, M1_DIM + 1, dtype=float)
    return LevyConfig(np.zeros(M1_DIM), gaussian_enabled=False, rate_lambda=1.0,
                      jump_law=JumpLaw.point_mass(1.0 / n))


@pytest.fixture
def scalar():
    return SpectralModel(a=[1.0], a_tilde=[2.0], q=[1.0])


@pytest.fixture
def no_l2():
    return SequenceModel("1", "1 + n^2", "exp(-n^2)", 64, "exp(-n^2/4)/n")


@pytest.fixture
def one_sided():
    return SequenceModel("n^4", "1", "n^(-8)", 64, "n^(-7)")


@pytest.fixture
def m1_arrays_q():
    """q_n = n^-2 and sigma_n = 1/n on the M1 modes"""
    _, _, q = m1_arrays()
    return q, np.sqrt(q)
