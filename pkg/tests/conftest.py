import numpy as np
import pytest

from ddo.grid import DomainSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


DIRICHLET = DomainSpec.interval()
TORUS1 = DomainSpec.torus(1, 1.0)
TORUS2 = DomainSpec.torus(2, 1.0)
ALL_DOMAINS = [DIRICHLET, TORUS1, TORUS2]
DOMAIN_IDS = ["dirichlet", "torus1d", "torus2d"]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
