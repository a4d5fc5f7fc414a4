import numpy as np
import pytest

from pascali_lab import CoefficientField, Grid, Mask, sample


@pytest.fixture(scope="session")
def vekua():
    """w_zbar - conj(w) = 0, solved by exp(2x)."""
    return CoefficientField(1, 0, -1)


@pytest.fixture(scope="session")
def grid256():
    return Grid(0, 1.25, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bump(grid, center=0, radius=1.0):
    """Smooth function supported in the open disk of the given radius."""
    def f(z):
        r2 = np.abs(z - center) ** 2 / radius**2
        out = np.zeros(z.shape)
        inside = r2 < 1
        out[inside] = np.exp(-1 / (1 - r2[inside]))
        return out

    return sample(f, grid)


def unit_disk(grid, r=1.0):
    return Mask.disk(grid, 0, r)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
