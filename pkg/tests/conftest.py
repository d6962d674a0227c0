from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ifqnet import container, zoo

settings.register_profile("ifq", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ifq")

# lines reported by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def alexnet():
    return zoo.alexnet_hwgq(2)


@pytest.fixture(scope="session")
def alexnet_file(alexnet, tmp_path_factory):
    path = tmp_path_factory.mktemp("fixtures") / "alexnet-hwgq-k2.ifqn"
    container.save_model(alexnet, path)
    return path


@pytest.fixture(scope="session")
def alexnet_inputs():
    return zoo.calibration_images(100, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
