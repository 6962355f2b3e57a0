import numpy as np
import pytest

from bscahn.assembly import assemble
from bscahn.mesh import generate_unit_square


@pytest.fixture(scope="session")
def mesh2():
    return generate_unit_square(2)


@pytest.fixture(scope="session")
def ops2(mesh2):
    return assemble(mesh2)


@pytest.fixture(scope="session")
def mesh4():
    return generate_unit_square(4)


@pytest.fixture(scope="session")
def ops4(mesh4):
    return assemble(mesh4)


@pytest.fixture(scope="session")
def mesh8():
    return generate_unit_square(8)


@pytest.fixture(scope="session")
def ops8(mesh8):
    return assemble(mesh8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
