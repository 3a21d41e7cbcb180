import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from holistic2d.subgrid import construct

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def built(n, p_gamma=3, p_alpha=3, total=None, mode="rational"):
    """Constructions are deterministic; share them across tests."""
    return construct(n, p_gamma, p_alpha, total=total, mode=mode)


@pytest.fixture(scope="session")
def manifold_n2():
    return built(2)


@pytest.fixture(scope="session")
def manifold_n4():
    return built(4)


#: one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
