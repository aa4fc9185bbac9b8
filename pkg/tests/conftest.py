import pytest

from charedit.bundle import build_desk_stack


@pytest.fixture(scope="session")
def desk_stack():
    return build_desk_stack(seed=0)


@pytest.fixture(scope="session")
def mean_face(desk_stack):
    return desk_stack.mean_face()
