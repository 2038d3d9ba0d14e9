import pytest

from valuecascade.values import ValueSystem, load_value_system, schwartz_system


@pytest.fixture(scope="session")
def system() -> ValueSystem:
    return schwartz_system()


@pytest.fixture(scope="session")
def tiny() -> ValueSystem:
    return load_value_system({"A": ["alpha things"], "B": ["beta things"], "C": ["gamma things"]}, name="tiny")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
