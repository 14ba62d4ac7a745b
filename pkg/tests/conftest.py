import pytest

_RESULTS = []


@pytest.fixture
def record_criterion():
    """Record one acceptance criterion; all of them are listed after the run."""

    def record(number, title, ok, detail=""):
        _RESULTS.append((number, title, bool(ok), detail))
        print(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  {detail}")
