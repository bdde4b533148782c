import numpy as np
import pytest

from affcone.models import control_model, zoo

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def models():
    return zoo()


@pytest.fixture(scope="session")
def control():
    return control_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
