import pytest

_LINES: list = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, passed: bool, text: str) -> bool:
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number:<4} {status}  {text}"
        _LINES.append((str(number), line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES, key=lambda x: (int(x[0].rstrip("ab")), x[0])):
        terminalreporter.write_line(line)
