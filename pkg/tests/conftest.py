import numpy as np
import pytest

from mabesov import build_grid, build_stack, make_potential
from mabesov.ma_sio import build_canonical_family


def quadratic_stack(resolution, lower=-4.0, upper=4.0):
    pot = make_potential("quadratic", 1, lower, upper)
    grid = build_grid(pot, resolution)
    return build_stack(grid, pot)


@pytest.fixture(scope="session")
def quad512():
    return quadratic_stack(512)


@pytest.fixture(scope="session")
def quad256():
    return quadratic_stack(256)


@pytest.fixture(scope="session")
def quad_small():
    pot = make_potential("quadratic", 1, -4, 4)
    return build_stack(build_grid(pot, 128), pot)


@pytest.fixture(scope="session")
def family512(quad512):
    return build_canonical_family(quad512)


@pytest.fixture(scope="session")
def family256(quad256):
    return build_canonical_family(quad256)


@pytest.fixture(scope="session")
def stack2d():
    pot = make_potential("quadratic", 2, -1, 1)
    return build_stack(build_grid(pot, 32), pot)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
