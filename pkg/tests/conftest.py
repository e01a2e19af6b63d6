import numpy as np
import pytest

from maxgraph.boundary_data import preset
from maxgraph.domain_grid import build_grid
from maxgraph.solver import continuity_solve

SIN_AMP = 0.6 / np.pi


def box(counts=(17, 17), bounds=((0.0, 1.0), (0.0, 1.0))):
    return build_grid(kind="cartesian_box", bounds=[list(b) for b in bounds], counts=list(counts))


def annulus(nr, nt=None, r0=1.0, r1=2.0):
    return build_grid(kind="polar_annulus", bounds=[[r0, r1]], counts=[nr, nt or 4 * (nr - 1)])


def sinusoidal(grid, m=2):
    return preset(grid, "sinusoidal", m=m, amplitude=SIN_AMP, frequency=np.pi)


def catenoid(grid, K=1.0):
    return preset(grid, "catenoid_trace", m=1, K=K)


@pytest.fixture(scope="session")
def sin_state():
    g = box()
    bd = sinusoidal(g)
    return bd, continuity_solve(bd, g)


@pytest.fixture(scope="session")
def cat_state():
    g = annulus(17)
    bd = catenoid(g)
    return bd, continuity_solve(bd, g)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
