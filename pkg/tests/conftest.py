import numpy as np
import pytest

from nonmarkov.dephasing import OpenSystemConfig
from nonmarkov.spectrum import GaussianMixtureSpectrum

SIGMA = 1.8e12
DELTA_OMEGA = 1.6e13

# acceptance verdicts, filled in by test_acceptance and echoed in the summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def cfg():
    return OpenSystemConfig()


@pytest.fixture
def reference_mixture():
    return GaussianMixtureSpectrum.two_peak(1.0, SIGMA, DELTA_OMEGA)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
