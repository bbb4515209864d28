import pytest

_REPORT = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one ``(criterion, passed, detail)`` line per acceptance check."""

    def record(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _REPORT.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
