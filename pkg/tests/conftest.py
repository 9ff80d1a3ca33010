import numpy as np
import pytest

from openrace.bvh import build_bvh
from openrace.mesh import build_track_mesh
from openrace.stock import gt3_generic, mini_ring, oval_1km


@pytest.fixture(scope="session")
def oval():
    return oval_1km()


@pytest.fixture(scope="session")
def gt3():
    return gt3_generic()


@pytest.fixture(scope="session")
def ring50():
    return mini_ring(50.0, 5.0)


@pytest.fixture(scope="session")
def oval_mesh(oval):
    return build_track_mesh(oval, 1.0)


@pytest.fixture(scope="session")
def oval_bvh(oval_mesh):
    return build_bvh(oval_mesh)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
