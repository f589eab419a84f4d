import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdlbundle import BernoulliFamily, CanonicalBernoulli, MixtureFamily

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("default")

TWO_SYMBOL = np.array([[0.9, 0.1], [0.2, 0.8]])
THREE_SYMBOL = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
FOUR_SYMBOL = np.array([[0.6, 0.2, 0.1, 0.1], [0.1, 0.6, 0.2, 0.1], [0.1, 0.1, 0.3, 0.5]])


@pytest.fixture(scope="session")
def mix2():
    """K=1 mixture over two symbols."""
    return MixtureFamily(TWO_SYMBOL, 0.2)


@pytest.fixture(scope="session")
def mix3():
    """K=1 mixture over three symbols; its empirical Fisher can disagree with J at the estimate."""
    return MixtureFamily(THREE_SYMBOL, 0.2)


@pytest.fixture(scope="session")
def mix_k2():
    return MixtureFamily(FOUR_SYMBOL, 0.15)


@pytest.fixture(scope="session")
def bern():
    return BernoulliFamily()


@pytest.fixture(scope="session")
def canon():
    return CanonicalBernoulli()
