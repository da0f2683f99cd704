import numpy as np
import pytest

from hvacadal.model import AhuParams, BuildingModel, ExogenousSeries, ZoneParams
from hvacadal.scenario import generate_scenario


def two_zone(horizon=4, t_init=(25.0, 25.5), q=0.5, t_out=30.0, cap=1.5):
    zones = tuple(ZoneParams(t_init=t) for t in t_init)
    model = BuildingModel(zones=zones, coupling={(0, 1): 14.0}, ahu=AhuParams(m_total_max=cap), horizon=horizon)
    exo = ExogenousSeries(t_out=np.full(horizon, t_out), q_load=np.full((2, horizon), q),
                          price=np.full(horizon, 0.2), t_supply=np.full(horizon, 15.0))
    return model, exo


@pytest.fixture
def toy():
    return two_zone()


@pytest.fixture(scope="session")
def five_zone_short():
    return generate_scenario(5, seed=1, horizon=8)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE = {}


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (name, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
