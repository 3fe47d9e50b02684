import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criterion_log(pytestconfig):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = pytestconfig.stash.setdefault(_LINES, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
