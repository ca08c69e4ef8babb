import pytest

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def record(number, name, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    return record
