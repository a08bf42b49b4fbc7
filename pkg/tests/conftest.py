import pytest

ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    """Store and print one PASS/FAIL line; the terminal summary repeats them."""
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
