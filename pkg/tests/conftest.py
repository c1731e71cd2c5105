import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aoimac.config import ScenarioConfig
from aoimac.mdp import NomaModel, OmaModel

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 12


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        ok, detail = ACCEPTANCE.get(k, (False, "not run"))
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def tiny_scenario():
    return ScenarioConfig(max_rounds=2, delta_max=4, K=2)


@pytest.fixture(scope="session")
def small_scenario():
    return ScenarioConfig(max_rounds=3, delta_max=12, K=4)


@pytest.fixture(scope="session")
def small_oma(small_scenario):
    return OmaModel(small_scenario)


@pytest.fixture(scope="session")
def small_noma(small_scenario):
    return NomaModel(small_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
