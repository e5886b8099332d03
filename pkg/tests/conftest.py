import pytest

# (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def report():
    def add(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  [{criterion}] {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return passed
    return add


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute training runs")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
