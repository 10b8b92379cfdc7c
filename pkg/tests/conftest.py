import pytest

from adwalk import desk_scenario

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def desk():
    return desk_scenario()


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
