import numpy as np
import pytest

from lbkit.fields import DistributionField, GaussianMixtureProfile, VelocityGrid
from lbkit.potential import PotentialModel


@pytest.fixture(scope="session")
def grid2():
    return VelocityGrid.regular(2, 48, 6.0)


@pytest.fixture(scope="session")
def grid2_small():
    return VelocityGrid.regular(2, 24, 6.0)


@pytest.fixture(scope="session")
def maxwellian2(grid2):
    return DistributionField.maxwellian(grid2)


@pytest.fixture(scope="session")
def bi_maxwellian2(grid2):
    prof = GaussianMixtureProfile.bi_maxwellian(np.array([0.9, 0.4]))
    return DistributionField.from_profile(grid2, prof)


@pytest.fixture(scope="session")
def potential2():
    return PotentialModel.default(2)


@pytest.fixture(scope="session")
def potential_zero():
    return PotentialModel(s=6.0, s_prime=6.0, amplitude=0.0)
