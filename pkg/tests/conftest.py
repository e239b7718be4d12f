import numpy as np
import pytest
from hypothesis import settings

from flatham.model import builtin_specs

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def specs():
    return builtin_specs()


@pytest.fixture(scope="session")
def radial(specs):
    return specs["radial"]


@pytest.fixture(scope="session")
def radial_table(radial):
    from flatham.averaging import tabulate_reduced

    return tabulate_reduced(radial)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
