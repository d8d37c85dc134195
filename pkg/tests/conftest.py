import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for a numbered criterion; returns the verdict."""
    lines = request.config.stash.setdefault(_LINES, {})

    def record(number, ok, detail):
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
