"""Acceptance-summary plumbing shared by the test suite.

Tests record one line per acceptance check through the ``check`` fixture;
after the run a terminal-summary hook prints the collected lines as a
single block, so the status of every end-to-end guarantee is visible at
a glance even in a long pytest log.
"""

import pytest

_CHECKS: list[tuple[str, bool, str]] = []


@pytest.fixture
def check():
    """check(name, ok, detail): record one summary line, then assert ok."""

    def _check(name: str, ok, detail: str = ""):
        ok = bool(ok)
        _CHECKS.append((name, ok, detail))
        assert ok, f"{name}: {detail}"

    return _check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CHECKS:
        return
    terminalreporter.section("acceptance checks")
    width = max(len(name) for name, _, _ in _CHECKS)
    for name, ok, detail in _CHECKS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name.ljust(width)}  {detail}")
