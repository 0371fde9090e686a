import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dogbone():
    from seqop.solid import build_dogbone_mesh
    return build_dogbone_mesh()


@pytest.fixture(scope="session")
def small_dogbone():
    from seqop.solid import build_dogbone_mesh
    return build_dogbone_mesh(300)
