"""Shared pytest hooks: a one-line-per-criterion report for the acceptance suite."""

ACCEPTANCE_LINES = []


def report(number, passed, detail):
    """Record and print one acceptance line."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
