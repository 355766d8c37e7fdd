import os

import numpy as np
import pytest

from acoustopt.geometry import DomainSpec, build_mesh, standard_domain
from acoustopt.objective import Evaluator

FULLSCALE = os.environ.get("ACOUSTOPT_FULLSCALE", "") not in ("", "0")


@pytest.fixture(scope="session")
def mesh1():
    return build_mesh(standard_domain(1e-3))


@pytest.fixture(scope="session")
def mesh2():
    return build_mesh(standard_domain(2e-3))


@pytest.fixture(scope="session")
def ev1(mesh1):
    return Evaluator.create(mesh1)


@pytest.fixture(scope="session")
def ev2(mesh2):
    return Evaluator.create(mesh2)


@pytest.fixture(scope="session")
def pipe_mesh():
    """Straight 30 mm pipe at h = 1 mm."""
    return build_mesh(DomainSpec(r_design=0.03, r_left=0.03, r_right=0.03, h=1e-3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
