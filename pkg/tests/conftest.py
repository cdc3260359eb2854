import numpy as np
import pytest
from hypothesis import settings

from hyperrom.mesh_fem import build_space

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


@pytest.fixture
def unit_square_q2():
    return build_space(2, [(0.0, 1.0), (0.0, 1.0)], (4, 4), degree=2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def fd_jacobian(func, x, eps=1e-6):
    """Central finite differences, one column per coordinate."""
    cols = []
    for n in range(x.size):
        e = np.zeros_like(x)
        e[n] = eps
        cols.append((func(x + e) - func(x - e)) / (2 * eps))
    return np.column_stack(cols)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
