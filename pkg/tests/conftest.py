import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, ok, message)`` for the end-of-run acceptance summary."""
    def record(number, ok, message):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {message}"
        CRITERIA.setdefault(number, []).append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        for line in CRITERIA[number]:
            terminalreporter.write_line(line)
