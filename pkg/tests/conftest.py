import numpy as np
import pytest

from satqkd.config import Config
from satqkd.geometry import PassProfile, reference_pass


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def ref_pass():
    return reference_pass()


def flat_profile(n, range_m=600e3, elevation_deg=54.0, step_s=1.0):
    """Profile with fixed geometry, handy when only statistics matter."""
    return PassProfile(np.arange(n) * step_s, np.full(n, range_m), np.full(n, np.radians(elevation_deg)),
                       step_s)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
