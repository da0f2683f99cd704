import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hvacadal.baseline import solve_centralized_relaxed
from hvacadal.model import ExogenousSeries, build_discrete_dynamics, simulate_schedule
from hvacadal.relax import (M_IDX, T_IDX, X_IDX, McCormickBox, RelaxationError, assemble_stacked, dump_stacked,
                            envelope_interval, local_feasible_set, mccormick_constraints, p2_violation,
                            p3_violation, p4_violation, stack_agent, stacked_residuals, unstack_agents)
from hvacadal.scenario import generate_scenario

BOX = McCormickBox(m_lo=0.0, m_hi=0.5, t_lo=24.0, t_hi=26.0, t_ref=15.0)


def test_hand_values():
    lo, hi = envelope_interval(BOX, 0.5, 26.0)
    assert lo == pytest.approx(5.5) and hi == pytest.approx(5.5)
    lo, hi = envelope_interval(BOX, 0.25, 25.0)
    assert (lo, hi) == (pytest.approx(2.25), pytest.approx(2.75))


def test_rows_agree_with_interval():
    rows = mccormick_constraints(BOX)
    # at (m, T) = (0.25, 25) the slack of each row is zero exactly at the interval ends
    for x, zero_rows in ((2.25, (0, 1)), (2.75, (2, 3))):
        s = rows.slack(25.0, 0.25, x)
        assert np.allclose(s[list(zero_rows)], 0.0, atol=1e-12)
        assert np.all(s >= -1e-12)


def test_corner_tightness_all_corners():
    for m in (BOX.m_lo, BOX.m_hi):
        for T in (BOX.t_lo, BOX.t_hi):
            lo, hi = envelope_interval(BOX, m, T)
            assert lo == pytest.approx(m * (T - BOX.t_ref), abs=1e-12)
            assert hi == pytest.approx(m * (T - BOX.t_ref), abs=1e-12)


def test_containment_random_samples():
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10):
        box = McCormickBox(m_lo=rng.uniform(0, 0.2), m_hi=rng.uniform(0.3, 1.0), t_lo=rng.uniform(20, 24),
                           t_hi=rng.uniform(25, 30), t_ref=rng.uniform(10, 16))
        m = rng.uniform(box.m_lo, box.m_hi, 1000)
        T = rng.uniform(box.t_lo, box.t_hi, 1000)
        lo, hi = envelope_interval(box, m, T)
        prod = m * (T - box.t_ref)
        violations += int(np.sum(prod < lo - 1e-12) + np.sum(prod > hi + 1e-12))
    assert violations == 0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_interval_nonempty_and_gap_bounded(u, v):
    m = BOX.m_lo + u * (BOX.m_hi - BOX.m_lo)
    T = BOX.t_lo + v * (BOX.t_hi - BOX.t_lo)
    lo, hi = envelope_interval(BOX, m, T)
    assert lo <= m * (T - BOX.t_ref) + 1e-12 <= hi + 2e-12
    # each side deviates from the product by at most dm * dT / 4
    q = (BOX.m_hi - BOX.m_lo) * (BOX.t_hi - BOX.t_lo) / 4
    prod = m * (T - BOX.t_ref)
    assert prod - lo <= q + 1e-12 and hi - prod <= q + 1e-12


def test_box_validation():
    with pytest.raises(RelaxationError):
        McCormickBox(0.5, 0.5, 24, 26, 15)
    with pytest.raises(RelaxationError):
        McCormickBox(0.0, 0.5, 24, 26, 25)


def test_local_polytope(toy):
    model, exo = toy
    poly = local_feasible_set(model.zones[0], exo.t_supply)
    assert poly.rows.shape == (16, 12) and poly.rhs.shape == (16,)
    # pinned initial temperature
    assert poly.lower[T_IDX] == poly.upper[T_IDX] == model.zones[0].t_init
    temps = np.array([25.0, 24.5, 25.5, 26.0])
    flows = np.array([0.1, 0.5, 0.0, 0.3])
    x = stack_agent(temps, flows, flows * (temps - 15.0))
    assert poly.contains(x)
    # stage 0 collapses to the exact product
    bad = x.copy()
    bad[X_IDX] += 1e-3
    assert not poly.contains(bad, tol=1e-9)
    # an X above the upper envelope at stage 1 is rejected
    bad = x.copy()
    bad[3 + X_IDX] += 1.0
    assert poly.violation(bad) > 0.1


def test_stack_round_trip():
    rng = np.random.default_rng(1)
    a, b, c = rng.normal(size=(3, 4, 6))
    x = stack_agent(a, b, c)
    assert x.shape == (4, 18)
    for u, v in zip(unstack_agents(x), (a, b, c)):
        assert np.array_equal(u, v)


def test_dynamics_blocks_match_simulator(toy):
    model, exo = toy
    dyn = build_discrete_dynamics(model, exo)
    sys = assemble_stacked(dyn, model)
    flows = np.array([[0.1, 0.2, 0.0, 0.3], [0.05, 0.0, 0.4, 0.1]])
    temps = simulate_schedule(model, exo, flows)
    agents = stack_agent(temps, flows, flows * (temps - 15.0))
    y = flows.sum(axis=0)
    r_dyn, r_flow, r_cap = stacked_residuals(sys, agents, y, np.zeros(4), sys.c - y)
    assert np.max(np.abs(r_dyn)) < 1e-12
    assert np.max(np.abs(r_flow)) == 0 and np.max(np.abs(r_cap)) < 1e-15
    assert sys.b_flow.shape == (4, 12) and np.array_equal(sys.b_coord, -np.eye(4))


def _feasible_points(scen, k, rng):
    """Convex combinations of relaxed optima under random prices: feasible for the relaxed problem."""
    pts = []
    for _ in range(3):
        exo = ExogenousSeries(t_out=scen.exo.t_out, q_load=scen.exo.q_load, t_supply=scen.exo.t_supply,
                              price=rng.uniform(0.05, 0.5, scen.model.horizon))
        r = solve_centralized_relaxed(scen.model, exo).relaxed
        pts.append(r)
    out = []
    for _ in range(k):
        w = rng.dirichlet(np.ones(len(pts)))
        out.append({key: sum(wi * p[key] for wi, p in zip(w, pts)) for key in pts[0]})
    return out


def test_p2_p3_p4_equivalence_on_feasible_and_perturbed_points():
    rng = np.random.default_rng(7)
    scen = generate_scenario(3, seed=4, horizon=6)
    model, exo = scen.model, scen.exo
    sys = assemble_stacked(build_discrete_dynamics(model, exo), model)
    for p in _feasible_points(scen, 5, rng):
        agents = stack_agent(p["temps"], p["flows"], p["x_cool"])
        y = p["y_total"]
        total = p["flows"].sum(axis=0)
        s1, s2 = y - total, sys.c - total
        v2 = p2_violation(model, exo, p["temps"], p["flows"], p["x_cool"], y)
        v3 = p3_violation(sys, agents, y)
        v4 = p4_violation(sys, agents, y, s1, s2)
        assert max(v2, v3, v4) < 1e-7
        # a perturbation of one temperature breaks all three forms alike
        bad = p["temps"].copy()
        bad[1, 3] += 0.05
        agents_bad = stack_agent(bad, p["flows"], p["x_cool"])
        v2b = p2_violation(model, exo, bad, p["flows"], p["x_cool"], y)
        v3b = p3_violation(sys, agents_bad, y)
        v4b = p4_violation(sys, agents_bad, y, s1, s2)
        assert min(v2b, v3b, v4b) > 1e-3
        assert v3b == pytest.approx(v4b)


def test_dump_stacked_lists_every_block(toy):
    model, exo = toy
    sys = assemble_stacked(build_discrete_dynamics(model, exo), model)
    buf = io.StringIO()
    dump_stacked(sys, buf)
    text = buf.getvalue()
    assert text.startswith("%%StackedSystem")
    headers = [ln for ln in text.splitlines() if ln.startswith("%block")]
    names = [h.split()[1] for h in headers]
    assert names[:2] == ["A_d[0,0]", "A_d[1,1]"] and "B_d[0]" in names and "c_d" in names
    # A_d[0,0]: three nonzeros per row over 3 rows
    assert headers[0].split()[2:] == ["3", "12", "9"]
