import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from supctrl.experiments import default_config, run_fig1  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> bool:
    """Log one acceptance line for the terminal summary and return ``ok``."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1_report():
    """Converged desk-scale tracking solve (shared; about 20 s)."""
    return run_fig1(default_config("fig1"), write=False)
