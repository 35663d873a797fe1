import math

import pytest

from beamsim.antenna import ArrayDesign
from beamsim.channel import LinkBudget, NetworkLayout, RadioConfig
from beamsim.codebook import SectorGeometry, build_codebook
from beamsim.optimizer import OptimizedDesign

ACCEPTANCE_LINES: list[str] = []

# a feasible mass-event style design, fixed so unit tests do not depend on the optimizer
FIXED_DESIGN = ArrayDesign(12, 32, d_x=0.41964285714285715, d_z=0.7, alpha_x=0.1805320393820497,
                           alpha_z=0.17112821080460203)
MASS_LEVELS = [(2, 4, None), (6, 16, "azimuth"), (12, 16, "azimuth"), (12, 32, "elevation")]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixed_design():
    return OptimizedDesign(FIXED_DESIGN, 29.9, 30.0, True, ((6, 16), (12, 16), (12, 32)))


@pytest.fixture(scope="session")
def small_geometry():
    return SectorGeometry(500.0, pixel_m=10.0)


@pytest.fixture(scope="session")
def relaxed_book(fixed_design, small_geometry):
    return build_codebook(fixed_design, small_geometry, MASS_LEVELS, relaxed=True)


@pytest.fixture(scope="session")
def strict_book(fixed_design, small_geometry):
    return build_codebook(fixed_design, small_geometry, MASS_LEVELS, relaxed=False)


@pytest.fixture(scope="session")
def budget(relaxed_book):
    return LinkBudget(relaxed_book, NetworkLayout(500.0), RadioConfig())


def rad(deg):
    return math.radians(deg)
