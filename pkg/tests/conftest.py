import pytest

from thermoflood import thermo
from thermoflood.scenario import Scenario, shipped_scenario

import _support


@pytest.fixture(scope="session")
def fluid():
    return _support.mixture()


@pytest.fixture(scope="session")
def rock():
    return thermo.RockSpec()


@pytest.fixture(scope="session")
def quarter():
    """Bundled 3x3x1 two-well thermal scenario, built once."""
    sc = Scenario.load(shipped_scenario("quarter_3x3_thermal"))
    return sc, sc.build()


@pytest.fixture(scope="session")
def quarter_iso():
    sc = Scenario.load(shipped_scenario("quarter_3x3_thermal")).with_mode("isothermal")
    return sc, sc.build()


_ACCEPTANCE = {}


@pytest.fixture
def acceptance_report():
    """Record a one-line measurement for the acceptance summary."""
    def record(criterion, text):
        _ACCEPTANCE[criterion] = text
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance measurements")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k:2d}: {_ACCEPTANCE[k]}")
