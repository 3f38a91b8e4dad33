from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the session summary."""

    def emit(number, passed, summary, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:>2}: {status} | {summary}"
        if detail:
            line += f" | {detail}"
        _LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
