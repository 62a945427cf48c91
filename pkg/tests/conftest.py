import numpy as np
import pytest

from extremis.presets import env_preset, sim_preset
from extremis.rng import substream


@pytest.fixture
def rng():
    return substream(20260825, "tests")


@pytest.fixture(scope="session")
def site_a_env():
    return env_preset("site-a-like")


@pytest.fixture(scope="session")
def site_a_sim():
    return sim_preset("site-a-like")


@pytest.fixture(scope="session")
def brittany_env():
    return env_preset("brittany-like")


@pytest.fixture(scope="session")
def brittany_sim():
    return sim_preset("brittany-like")


def assert_close(actual, expected, rtol=0.0, atol=0.0, label=""):
    __tracebackhide__ = True
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol,
                               err_msg=label)
