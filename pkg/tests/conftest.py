import warnings

import numpy as np
import pytest

from itolift.lifting import make_grid
from itolift.sde import make_bessel, make_cubic, make_ou, make_wright_fisher


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def models():
    return {
        "cubic": make_cubic(1.0),
        "bessel": make_bessel(3, 1.0, 5.0),
        "wright_fisher": make_wright_fisher(2.0),
        "ou": make_ou(1.0, 1.0),
    }


@pytest.fixture
def ou_grid():
    m = make_ou(1.0, 1.0)
    return m, make_grid(m)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record one acceptance line; the terminal summary repeats them all."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
