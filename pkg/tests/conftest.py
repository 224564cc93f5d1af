import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``acceptance(number, status, detail)``."""

    def record(number, status, detail):
        _ACCEPTANCE.append((number, status, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(_ACCEPTANCE, key=lambda r: str(r[0])):
        terminalreporter.write_line(f"criterion {number}: {status} - {detail}")
