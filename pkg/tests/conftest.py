import warnings

import numpy as np
import pytest
from hypothesis import settings

from beltrami.fields import RadialProfile, disk_grid, mu_of_radial_profile

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disk128():
    return disk_grid(128)


@pytest.fixture(scope="session")
def disk256():
    return disk_grid(256)


@pytest.fixture(scope="session")
def log_profile():
    return RadialProfile("log-degenerate")


@pytest.fixture(scope="session")
def log_mu256(disk256, log_profile):
    return mu_of_radial_profile(log_profile, disk256)


@pytest.fixture
def no_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        yield


