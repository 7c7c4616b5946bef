import pytest

from smallpia.grid import GridSpec
from smallpia.hjb_ref import solve_bellman
from smallpia.linpde import LinearExtrapolation
from smallpia.problem import get_problem


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        # --runslow given in cli: do not skip slow tests
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def grid():
    """Coarse enough for the default run, fine enough for the shapes to show."""
    return GridSpec(-6.0, 6.0, 119, 1.0, 60)


@pytest.fixture(scope='session')
def acceptance_grid():
    return GridSpec(-6.0, 6.0, 599, 1.0, 400)


@pytest.fixture(scope='session')
def bc():
    return LinearExtrapolation()


@pytest.fixture(scope='session')
def problem():
    return get_problem('example_s1k1')


@pytest.fixture(scope='session')
def reference(problem, grid, bc):
    return solve_bellman(problem, grid, bc)
