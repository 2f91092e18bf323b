from __future__ import annotations

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
