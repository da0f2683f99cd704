from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from hvacadal.baseline import solve_centralized_nonlinear, solve_centralized_relaxed
from hvacadal.model import simulate_schedule
from hvacadal.recover import (ConsistencyError, make_schedule, recover_schedule, validate_schedule)

from conftest import two_zone


def test_exact_products_are_reproduced(toy):
    model, exo = toy
    ref = solve_centralized_nonlinear(model, exo)
    sched = ref.schedule
    rec = recover_schedule(SimpleNamespace(x_cool=sched.x_cool), model, exo)
    np.testing.assert_allclose(rec.flows, sched.flows, rtol=0, atol=1e-12)
    assert rec.total_cost == pytest.approx(sched.total_cost, rel=1e-12)


def test_rollout_and_product_identity(five_zone_short):
    model, exo = five_zone_short.model, five_zone_short.exo
    ref = solve_centralized_relaxed(model, exo)
    rec = recover_schedule(SimpleNamespace(**ref.relaxed), model, exo)
    assert np.array_equal(rec.temps, simulate_schedule(model, exo, rec.flows))
    assert np.array_equal(rec.x_cool, rec.flows * (rec.temps - exo.t_supply[None, :]))
    lo, hi = model.zone_array("m_min")[:, None], model.zone_array("m_max")[:, None]
    assert np.all(rec.flows >= lo) and np.all(rec.flows <= hi)
    validate_schedule(rec, model, exo)
    # the relaxed optimum lower-bounds the recovered cost
    assert rec.total_cost >= ref.objective - 1e-9


def test_flow_targets_are_clamped(toy):
    model, exo = toy
    target = np.full((2, model.horizon), 100.0)
    rec = recover_schedule(SimpleNamespace(x_cool=target), model, exo)
    assert np.all(rec.flows == 0.5)
    rec = recover_schedule(SimpleNamespace(x_cool=-target), model, exo)
    assert np.all(rec.flows == 0.0)


def test_guard_uses_minimum_flow():
    model, exo = two_zone(t_init=(15.2, 25.0))
    rec = recover_schedule(SimpleNamespace(x_cool=np.full((2, model.horizon), 1.0)), model, exo)
    assert rec.flows[0, 0] == model.zones[0].m_min
    assert rec.flows[1, 0] == pytest.approx(1.0 / 10.0)


def test_ahu_cap_reported_and_repaired():
    model, exo = two_zone(cap=0.6)
    target = np.full((2, model.horizon), 5.0)
    rec = recover_schedule(SimpleNamespace(x_cool=target), model, exo)
    assert rec.violations.ahu_cap and not rec.violations.feasible
    fixed = recover_schedule(SimpleNamespace(x_cool=target), model, exo, repair_ahu=True)
    assert np.all(fixed.flows.sum(axis=0) <= 0.6 + 1e-12)
    assert not fixed.violations.ahu_cap
    validate_schedule(fixed, model, exo)


def test_comfort_violation_sign(toy):
    model, exo = toy
    hot = make_schedule(model, exo, np.zeros((2, model.horizon)))
    assert hot.violations.comfort and all(v[2] > 0 for v in hot.violations.comfort)
    assert all(v[1] >= 1 for v in hot.violations.comfort)
    cold = make_schedule(model, exo, np.full((2, model.horizon), 0.5))
    assert any(v[2] < 0 for v in cold.violations.comfort)
    assert hot.violations.max_comfort_excess == max(abs(v[2]) for v in hot.violations.comfort)


def test_validate_detects_tampering(toy):
    model, exo = toy
    sched = make_schedule(model, exo, np.full((2, model.horizon), 0.2))
    temps = sched.temps.copy()
    temps[0, 2] += 1e-12
    with pytest.raises(ConsistencyError):
        validate_schedule(replace(sched, temps=temps), model, exo)
    xc = sched.x_cool.copy()
    xc[1, 1] += 1e-9
    with pytest.raises(ConsistencyError):
        validate_schedule(replace(sched, x_cool=xc), model, exo)


def test_shape_mismatch(toy):
    model, exo = toy
    with pytest.raises(ValueError):
        recover_schedule(SimpleNamespace(x_cool=np.zeros((3, model.horizon))), model, exo)
