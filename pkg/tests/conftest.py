import pytest

from leonav import harness

# PASS/FAIL lines collected by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_cfg():
    return harness.ScenarioConfig(duration=5.0, n_leo=(5, 10), n_runs=3)


@pytest.fixture(scope="session")
def small_scenario(small_cfg):
    return harness.Scenario.build(small_cfg)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
