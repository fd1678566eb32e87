import pytest

# acceptance verdicts collected during the run, printed once at the end
VERDICTS = []


@pytest.fixture
def verdict():
    def record(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {name}: {detail}"
        VERDICTS.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
