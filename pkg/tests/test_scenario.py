import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hvacadal.scenario import (ScenarioParams, TopologyError, generate_scenario, outdoor_temperature,
                               random_topology, scenario_from_dict, scenario_to_dict, scenario_to_json, tou_price)


def connected(n, edges):
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen, stack = {0}, [0]
    while stack:
        for j in adj[stack.pop()] - seen:
            seen.add(j)
            stack.append(j)
    return len(seen) == n


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2 ** 32 - 1), st.integers(2, 6))
def test_topology_connected_and_degree_bounded(n, seed, max_degree):
    edges = random_topology(n, np.random.default_rng(seed), max_degree)
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        assert i < j
        deg[i] += 1
        deg[j] += 1
    assert deg.max(initial=0) <= max_degree
    assert connected(n, edges)


def test_topology_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(TopologyError):
        random_topology(0, rng)
    with pytest.raises(TopologyError):
        random_topology(3, rng, max_degree=1)
    with pytest.raises(TopologyError):
        random_topology(6, rng, complete=True)
    assert random_topology(5, rng, complete=True) == [(i, j) for i in range(5) for j in range(i + 1, 5)]


def test_five_zone_degree_and_parameters():
    s = generate_scenario(5, seed=1)
    assert s.model.degree().max() <= 4
    z = s.model.zones[0]
    assert (z.capacitance, z.r_out, z.m_min, z.m_max) == (1375.0, 50.0, 0.0, 0.5)
    assert set(s.model.coupling.values()) == {14.0}
    assert s.model.ahu.kappa_f == 0.08 and s.model.ahu.d_r == 0.8 and s.model.ahu.eta == 1.0
    t_init = s.model.zone_array("t_init")
    assert np.all((t_init >= 26.0) & (t_init <= 28.0))
    assert np.all((s.exo.q_load >= 0) & (s.exo.q_load <= 1))
    assert s.model.horizon == 48 and s.exo.q_load.shape == (5, 48)


def test_generation_is_deterministic_and_byte_stable():
    a = scenario_to_json(generate_scenario(7, seed=11))
    b = scenario_to_json(generate_scenario(7, seed=11))
    assert a == b
    assert a != scenario_to_json(generate_scenario(7, seed=12))
    back = scenario_from_dict(json.loads(a))
    assert scenario_to_json(back) == a
    assert back.digest() == generate_scenario(7, seed=11).digest()


def test_overrides_and_params_round_trip():
    s = generate_scenario(3, seed=0, horizon=6, t_init=(25.0, 25.5, 26.0))
    assert s.model.horizon == 6
    np.testing.assert_array_equal(s.model.zone_array("t_init"), [25.0, 25.5, 26.0])
    p = ScenarioParams(horizon=6, tariff=((0.0, 0.1), (12.0, 0.3)))
    assert ScenarioParams.from_dict(json.loads(json.dumps(p.to_dict()))) == p
    d = scenario_to_dict(s)
    assert d["format"] == "hvacadal-scenario/1" and d["provenance"]["seed"] == 0


def test_default_profiles():
    price = tou_price()
    assert price.shape == (48,)
    assert price[0] == 0.12 and price[14] == 0.20 and price[22] == 0.30 and price[47] == 0.12
    t = outdoor_temperature()
    assert t.max() == pytest.approx(34.0) and np.argmax(t) == 30
    assert t.min() == pytest.approx(26.0)
