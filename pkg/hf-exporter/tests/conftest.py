"""Exporter acceptance summary block, same pattern as the main suite."""

import pytest

_CHECKS: list[tuple[str, bool, str]] = []


@pytest.fixture
def check():
    def _check(name: str, ok, detail: str = ""):
        ok = bool(ok)
        _CHECKS.append((name, ok, detail))
        assert ok, f"{name}: {detail}"

    return _check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CHECKS:
        return
    terminalreporter.section("exporter acceptance checks")
    width = max(len(name) for name, _, _ in _CHECKS)
    for name, ok, detail in _CHECKS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name.ljust(width)}  {detail}")
