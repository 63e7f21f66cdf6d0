import pytest

from m2mlab.harness import run_episode
from m2mlab.scenario import builtin_scenario_doc, canonical_scenario, Scenario

SAMPLE_A = ('[{"bn":"127.0.0.1/temp-service","bt":1549359472},{"u":"lon","v":65.61721},'
             '{"u":"lat","v":22.13683},{"u":"K","v":253}]')
SAMPLE_B = '[{"n":"office-A2312-temp-sensor","u":"Cel","v":-20.4,"t":1549359472}]'


@pytest.fixture(scope="session")
def office():
    return canonical_scenario()


@pytest.fixture(scope="session")
def office_noisefree():
    return Scenario.from_dict(builtin_scenario_doc("office_noisefree"))


@pytest.fixture(scope="session")
def none_episode(office):
    return run_episode(office, "none")


@pytest.fixture(scope="session")
def oracle_episode(office):
    return run_episode(office, "oracle")


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
