import numpy as np
import pytest

from pdeflow.grid import DomainMask, Grid3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, dims, fill=0.8, slabs=None):
    grid = Grid3(dims)
    return DomainMask.from_inside(grid, rng.random(dims) < fill, slabs)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
