import time

import pytest

ACCEPTANCE = []
_START = time.perf_counter()


@pytest.fixture
def report():
    """Record one acceptance line: ``report(n, passed, detail)``."""

    def add(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
    terminalreporter.write_line(f"session wall time {time.perf_counter() - _START:.1f} s (budget 600 s)")
