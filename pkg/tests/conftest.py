import numpy as np
import pytest

import helpers


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def identity_store():
    return helpers.identity_codec_store()


@pytest.fixture(scope="session")
def random_store():
    return helpers.random_codec_store(np.random.default_rng(11))
