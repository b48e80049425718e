import numpy as np
import pytest

from eegbem.mesh import generate_icosphere
from eegbem.system import Dipole, sphere_model

RADII = (0.087, 0.092, 0.1)
SIGMA = (1 / 3, 1 / 240, 1 / 3)


@pytest.fixture(scope="session")
def sphere1():
    return generate_icosphere(1.0, 1)


@pytest.fixture(scope="session")
def sphere2():
    return generate_icosphere(1.0, 2)


@pytest.fixture(scope="session")
def head_f3():
    """Three-layer head model at geodesic frequency 3 (636 unknowns)."""
    return sphere_model(RADII, SIGMA, frequency=3)


@pytest.fixture(scope="session")
def radial_dipole():
    return Dipole(np.array([0.0, 0.0, 0.045]), np.array([0.0, 0.0, 1.0]))


VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
