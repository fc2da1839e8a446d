"""Shared fixtures; collects the one-line acceptance verdicts for the terminal summary."""

import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """``verdict(k, ok, detail)`` records and prints the outcome of criterion ``k``."""
    def record(k, ok, detail, soft=False):
        status = "PASS" if ok else ("WARN" if soft else "FAIL")
        line = f"criterion {k:>2}: {status}  {detail}"
        _VERDICTS[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[k])
