import numpy as np
import pytest

from selfcal.kinematics import nominal_model
from selfcal.synth import SynthConfig, generate

SMALL = {"st": 30, "hp1": 12, "hp2": 12, "vp": 12}


@pytest.fixture(scope="session")
def model():
    return nominal_model()


@pytest.fixture(scope="session")
def small_data(model):
    """Noiseless synthetic data, small enough for quick solves."""
    return generate(model, SynthConfig(max_poses=SMALL))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
