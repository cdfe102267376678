import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: list[tuple[str, str, str]] = []


class _Recorder:
    """Records acceptance outcomes for the end-of-run summary."""

    def __call__(self, name: str, ok: bool, detail: str = "") -> bool:
        self._add(name, "PASS" if ok else "FAIL", detail)
        return ok

    def skip(self, name: str, reason: str) -> None:
        self._add(name, "SKIP", reason)
        pytest.skip(reason)

    @staticmethod
    def _add(name, status, detail):
        _ACCEPTANCE.append((name, status, detail))
        print(f"[{status}] {name}: {detail}")


@pytest.fixture
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}  {detail}")
