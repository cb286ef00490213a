import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fgplab.market import MarketSpec

settings.register_profile("fgplab", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "fgplab"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record_acceptance():
    def record(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


TWO_ASSET_A = np.array([[0.04, 0.01], [0.01, 0.09]])
THREE_ASSET_A = np.array([[0.04, 0.01, 0.005], [0.01, 0.09, 0.02], [0.005, 0.02, 0.06]])


@pytest.fixture(scope="session")
def gbm2():
    return MarketSpec.from_covariance([0.05, 0.02], TWO_ASSET_A, np.log([1.0, 2.0]))


@pytest.fixture(scope="session")
def gbm3():
    return MarketSpec.from_covariance([0.05, 0.02, 0.03], THREE_ASSET_A, np.log([1.0, 2.0, 1.5]))


@pytest.fixture(scope="session")
def mm_market():
    """Money market (index 0) plus two correlated risky assets."""
    a = np.zeros((3, 3))
    a[1:, 1:] = [[0.04, 0.01], [0.01, 0.09]]
    return MarketSpec.from_covariance([0.01, 0.04, 0.02], a, [0.0, 0.0, 0.3], money_market_index=0)
