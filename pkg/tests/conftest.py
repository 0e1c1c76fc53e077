import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, line = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status} | {line}")


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("DRIVEAGENT_API_KEY", "test-key")
    return "test-key"


@pytest.fixture
def no_api_key(monkeypatch):
    monkeypatch.delenv("DRIVEAGENT_API_KEY", raising=False)


@pytest.fixture(autouse=True)
def _isolate_cwd(tmp_path, monkeypatch):
    # CLI commands write relative to the invocation directory
    monkeypatch.chdir(tmp_path)
    yield
    os.chdir(tmp_path)
