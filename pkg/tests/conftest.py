import pytest
from hypothesis import HealthCheck, settings

from heatlab.environment import lazy_walk, random_environment

settings.register_profile("heatlab", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("heatlab")

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, ok, detail)``."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, ok: bool, detail: str):
        lines.append((number, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def lazy1():
    return lazy_walk(1)


@pytest.fixture(scope="session")
def lazy1_float():
    return lazy_walk(1, exact=False)


@pytest.fixture(scope="session")
def rand1():
    return random_environment(1, 0.1, 3)


@pytest.fixture(scope="session")
def rand2():
    return random_environment(2, 0.05, 1)
