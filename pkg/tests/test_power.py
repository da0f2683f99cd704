import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hvacadal.model import AhuParams
from hvacadal.power import (DegenerateFlowError, cooling_power, cooling_power_mixed, fan_power, mixed_air_temp,
                            objective_terms, relaxed_objective, return_air_temp, schedule_cost)
from hvacadal.model import simulate_schedule


def test_hand_values():
    ahu = AhuParams(d_r=0.8, eta=1.0, c_p=1.012)
    # 1.012 * (0.2 * 0.2 * 15 + 0.8 * 0.2 * 10)
    assert cooling_power(np.array([0.2]), np.array([25.0]), 30.0, 15.0, ahu) == pytest.approx(2.2264, abs=1e-12)
    assert fan_power(np.array([0.25, 0.25]), 0.08) == pytest.approx(0.01, abs=1e-15)
    assert return_air_temp(np.array([0.1, 0.1]), np.array([25.0, 26.0])) == pytest.approx(25.5)
    assert mixed_air_temp(28.0, 25.5, 0.8) == pytest.approx(26.0)


def test_degenerate_return_air():
    with pytest.raises(DegenerateFlowError):
        return_air_temp(np.zeros(2), np.array([25.0, 26.0]))
    with pytest.raises(ValueError):
        mixed_air_temp(30.0, 25.0, 1.2)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 0.5), min_size=1, max_size=6), st.floats(0, 1), st.floats(26, 36),
       st.floats(12, 18), st.data())
def test_mixed_and_expanded_forms_agree(flows, d_r, t_out, t_sup, data):
    temps = data.draw(st.lists(st.floats(22, 30), min_size=len(flows), max_size=len(flows)))
    ahu = AhuParams(d_r=d_r)
    a = cooling_power(np.array(flows), np.array(temps), t_out, t_sup, ahu)
    b = cooling_power_mixed(np.array(flows), np.array(temps), t_out, t_sup, ahu)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-12)


def test_schedule_cost_matches_relaxed_objective_at_exact_point(toy):
    model, exo = toy
    flows = np.array([[0.1, 0.2, 0.0, 0.3], [0.05, 0.0, 0.4, 0.1]])
    temps = simulate_schedule(model, exo, flows)
    cost = schedule_cost(model, exo, flows, temps)
    terms = objective_terms(model, exo)
    x = flows * (temps - exo.t_supply)
    assert relaxed_objective(terms, x, flows.sum(axis=0)) == pytest.approx(cost.total, rel=1e-12)
    assert cost.total == pytest.approx(cost.cooling_cost + cost.fan_cost)
    assert len(cost.per_stage) == 4
