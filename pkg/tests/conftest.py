import sys

import numpy as np
import pytest

from adhoc_idid.domains import build_domain
from adhoc_idid.mcesp import LearnerConfig, generate_collaborative_set
from adhoc_idid.planning import brute_force_oracle


@pytest.fixture(scope="session")
def mabc():
    return build_domain("mabc")


@pytest.fixture(scope="session")
def grid():
    return build_domain("grid1shot")


@pytest.fixture(scope="session")
def mabc_oracle(mabc):
    return brute_force_oracle(mabc, 3)


@pytest.fixture(scope="session")
def mabc_learned(mabc):
    # the collaborative candidate set used by the augmented solver tests
    return generate_collaborative_set(mabc, 3, restarts=20, cfg=LearnerConfig(seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
