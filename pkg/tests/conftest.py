import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nngp import Activation

settings.register_profile(
    "repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def relu():
    return Activation.builtin("relu")


@pytest.fixture(scope="session")
def tanh():
    return Activation.builtin("tanh")


@pytest.fixture(scope="session")
def erf():
    return Activation.builtin("erf")


@pytest.fixture(scope="session")
def identity():
    return Activation.builtin("identity")


@pytest.fixture
def rng():
    return np.random.default_rng(20260917)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
