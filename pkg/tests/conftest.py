import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thbt.channel import ArrayConfig
from thbt.refine1 import Refine1Config
from thbt.refine2 import Refine2Config

settings.register_profile(
    "thbt", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("thbt")

# reference path: omega = 0.05 at 25.05 m
DE2_OMEGA = 0.05
DE2_B = 4.9782e-5


@pytest.fixture(scope="session")
def cfg():
    return ArrayConfig(256, 0.005)


@pytest.fixture(scope="session")
def r1():
    return Refine1Config(omega_bar=np.sqrt(3) / 2, b_bar=1.22e-4, k_tilde1=-6.09e-5)


@pytest.fixture(scope="session")
def r2():
    return Refine2Config(m2=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
